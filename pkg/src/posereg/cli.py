"""Command-line interface.

Subcommands: ``solve``, ``classify``, ``experiment``, ``sweep``,
``diagnose``, ``synth``. Flags can also be given in a flat key-value
config file (``--config``); explicit flags override file values. Exit
codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .classify import class_residuals, classify
from .data import (
    OcclusionSpec,
    read_manifest,
    apply_block_occlusion,
    generate_synthetic_dataset,
    load_image,
    occlusion_stream_seed,
    parse_key_values,
    save_image,
    write_manifest,
    DatasetManifest,
)
from .errors import ConfigError, PoseRegError
from .harness import (
    DEFAULT_OCCLUSIONS,
    ExperimentConfig,
    SyntheticSpec,
    diagnose_error,
    load_dataset,
    run_experiment,
    sweep_parameters,
    write_diagnosis_csv,
    write_gnuplot_script,
)
from .solver import SolverConfig, assemble_system, solve as run_solve

_CONFIG_KEYS = (
    "mode", "lambda", "eta", "mu", "epsilon", "max_iters", "occlusion",
    "residual", "seed", "jobs", "out", "manifest", "classes", "per_class",
    "test_per_class", "dims", "noise_sigma", "fill",
)


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}: {exc}") from None


def _parse_dims(text: str) -> tuple[int, int]:
    parts = str(text).lower().replace("x", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"dims must look like '64x64', got {text!r}")
    return int(parts[0]), int(parts[1])


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key-value config file; flags override it")
    p.add_argument("--mode", choices=("l2", "l1"), help="coefficient penalty (default l2)")
    p.add_argument("--lambda", dest="lam", help="nuclear-norm weight; comma list makes a grid")
    p.add_argument("--eta", help="coefficient-penalty weight; comma list makes a grid")
    p.add_argument("--mu", help="ADMM penalty; comma list makes a grid")
    p.add_argument("--epsilon", type=float, help="stopping tolerance (default 1e-6)")
    p.add_argument("--max-iters", type=int, help="iteration cap (default 500)")
    p.add_argument("--occlusion", help="occlusion fraction(s), e.g. 0.3 or 0.1,0.2,...")
    p.add_argument("--residual", choices=("plain", "compensated"),
                   help="residual variant (default plain)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, help="parallel classification threads (default 1)")
    p.add_argument("--out", type=Path, help="output directory for CSV reports")
    p.add_argument("--manifest", type=Path, help="dataset manifest; omit to use synthetic data")
    p.add_argument("--classes", type=int, help="synthetic class count (default 7)")
    p.add_argument("--per-class", type=int, help="synthetic training images per class (default 50)")
    p.add_argument("--test-per-class", type=int, help="test images per class (default 20)")
    p.add_argument("--dims", help="image dimensions, e.g. 64x64")
    p.add_argument("--noise-sigma", type=float, help="synthetic noise level (default 0.03)")
    p.add_argument("--fill", type=float, help="occlusion fill value (default 0)")


def _merged(args: argparse.Namespace) -> dict:
    """Flag values with config-file fallback (flags win)."""
    file_values: dict[str, str] = {}
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        file_values = parse_key_values(text, source=str(args.config))
        unknown = set(file_values) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")

    def pick(flag_name: str, key: str | None = None):
        value = getattr(args, flag_name, None)
        if value is not None:
            return value
        return file_values.get(key or flag_name)

    out = {
        "mode": pick("mode") or "l2",
        "lam": pick("lam", "lambda"),
        "eta": pick("eta"),
        "mu": pick("mu"),
        "epsilon": pick("epsilon"),
        "max_iters": pick("max_iters"),
        "occlusion": pick("occlusion"),
        "residual": pick("residual") or "plain",
        "seed": pick("seed"),
        "jobs": pick("jobs"),
        "out": pick("out"),
        "manifest": pick("manifest"),
        "classes": pick("classes"),
        "per_class": pick("per_class"),
        "test_per_class": pick("test_per_class"),
        "dims": pick("dims"),
        "noise_sigma": pick("noise_sigma"),
        "fill": pick("fill"),
    }
    try:
        out["lam"] = _parse_floats(out["lam"]) if out["lam"] is not None else (0.1,)
        out["eta"] = _parse_floats(out["eta"]) if out["eta"] is not None else None
        out["mu"] = _parse_floats(out["mu"]) if out["mu"] is not None else (1.0,)
        out["epsilon"] = float(out["epsilon"]) if out["epsilon"] is not None else 1e-6
        out["max_iters"] = int(out["max_iters"]) if out["max_iters"] is not None else 500
        out["occlusion"] = (
            _parse_floats(out["occlusion"]) if out["occlusion"] is not None else None
        )
        out["seed"] = int(out["seed"]) if out["seed"] is not None else 0
        out["jobs"] = int(out["jobs"]) if out["jobs"] is not None else 1
        out["classes"] = int(out["classes"]) if out["classes"] is not None else 7
        out["per_class"] = int(out["per_class"]) if out["per_class"] is not None else 50
        # a manifest declares its own test split; the built-in suite holds
        # out 20 per class unless told otherwise
        if out["test_per_class"] is not None:
            out["test_per_class"] = int(out["test_per_class"])
        out["dims"] = _parse_dims(out["dims"]) if out["dims"] is not None else (64, 64)
        out["noise_sigma"] = (
            float(out["noise_sigma"]) if out["noise_sigma"] is not None else 0.03
        )
        out["fill"] = float(out["fill"]) if out["fill"] is not None else 0.0
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameter value: {exc}") from None
    if out["residual"] == "compensated":
        out["residual"] = "error_compensated"
    if out["out"] is not None:
        out["out"] = Path(out["out"])
    if out["manifest"] is not None:
        out["manifest"] = Path(out["manifest"])
    return out


def _single(name: str, values: tuple[float, ...] | None) -> float | None:
    if values is None:
        return None
    if len(values) != 1:
        raise ConfigError(f"{name} must be a single value here, got {values}")
    return values[0]


def _resolved_test_per_class(m: dict) -> int:
    if m["test_per_class"] is not None:
        return m["test_per_class"]
    if m["manifest"] is not None:
        return read_manifest(m["manifest"]).test_per_class
    return 20


def _experiment_config(m: dict, occlusions) -> ExperimentConfig:
    return ExperimentConfig(
        manifest=m["manifest"],
        synthetic=SyntheticSpec(
            n_classes=m["classes"],
            per_class=m["per_class"],
            dims=m["dims"],
            noise_sigma=m["noise_sigma"],
        ),
        mode=m["mode"],
        lam=m["lam"] if len(m["lam"]) > 1 else m["lam"][0],
        eta=(m["eta"] if len(m["eta"]) > 1 else m["eta"][0]) if m["eta"] is not None else None,
        mu=m["mu"] if len(m["mu"]) > 1 else m["mu"][0],
        epsilon=m["epsilon"],
        max_iters=m["max_iters"],
        occlusions=occlusions,
        fill_value=m["fill"],
        residual=m["residual"],
        test_per_class=_resolved_test_per_class(m),
        seed=m["seed"],
        jobs=m["jobs"],
        out_dir=m["out"],
    )


def _solver_config(m: dict) -> SolverConfig:
    eta = _single("eta", m["eta"])
    if eta is None:
        eta = 4000.0 if m["mode"] == "l2" else 0.1
    return SolverConfig(
        lam=_single("lambda", m["lam"]),
        eta=eta,
        mu=_single("mu", m["mu"]),
        epsilon=m["epsilon"],
        max_iters=m["max_iters"],
        mode=m["mode"],
    )


def _load_single_image(m: dict, image_path: Path | None, test_index: int):
    """The dictionary plus one test image for solve/classify."""
    if m["manifest"] is not None:
        cfg = _experiment_config(m, occlusions=(0.0,))
        dictionary, tests = load_dataset(cfg)
    else:
        dictionary, tests = generate_synthetic_dataset(
            seed=m["seed"],
            n_classes=m["classes"],
            per_class=m["per_class"],
            dims=m["dims"],
            noise_sigma=m["noise_sigma"],
            test_per_class=max(_resolved_test_per_class(m), test_index + 1),
        )
    if image_path is not None:
        img = load_image(image_path, dictionary.atom_dims)
        label = None
    else:
        if not 0 <= test_index < len(tests):
            raise ConfigError(
                f"test index {test_index} out of range (0..{len(tests) - 1})"
            )
        img, label = tests[test_index]
    if m["occlusion"] is not None and len(m["occlusion"]) > 1:
        raise ConfigError("solve/classify take a single occlusion fraction")
    fraction = m["occlusion"][0] if m["occlusion"] else 0.0
    if fraction > 0:
        img = apply_block_occlusion(
            img,
            OcclusionSpec(
                axis_fraction=fraction,
                fill_value=m["fill"],
                seed=occlusion_stream_seed(m["seed"], 0, max(test_index, 0)),
            ),
        )
    return dictionary, img, label


def _print_kv(pairs) -> None:
    for key, value in pairs:
        print(f"{key} = {value}")


def _cmd_solve(args) -> int:
    m = _merged(args)
    dictionary, img, true_label = _load_single_image(m, args.image, args.test_index)
    cfg = _solver_config(m)
    system = assemble_system(dictionary)
    result = run_solve(dictionary, img, cfg, system=system)
    residuals = class_residuals(dictionary, result.x, img, system=system)
    pairs = [
        ("mode", cfg.mode),
        ("lambda", cfg.lam),
        ("eta", cfg.eta),
        ("mu", cfg.mu),
        ("iterations", result.iterations),
        ("converged", str(result.converged).lower()),
        ("constraint_residual", f"{result.constraint_residual:.6e}"),
        ("objective", f"{result.objective:.6e}"),
        ("coefficients_total", result.x.size),
        ("coefficients_nonzero", int(np.sum(np.abs(result.x) >= 1e-6))),
    ]
    if true_label is not None:
        pairs.append(("true_label", true_label))
    pairs += [(f"residual_{label}", f"{value:.6e}") for label, value in residuals.items()]
    _print_kv(pairs)
    if m["out"] is not None:
        out_dir = Path(m["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "coefficients.csv").open("w") as f:
            f.write("# schema: posereg/coefficients/v1\n")
            f.write("index,label,value\n")
            for j, v in enumerate(result.x):
                f.write(f"{j},{system.class_of_column(j)},{v:.12e}\n")
        print(f"coefficients_csv = {out_dir / 'coefficients.csv'}")
    return 0


def _cmd_classify(args) -> int:
    m = _merged(args)
    dictionary, img, true_label = _load_single_image(m, args.image, args.test_index)
    cfg = _solver_config(m)
    system = assemble_system(dictionary)
    result = classify(dictionary, img, cfg, variant=m["residual"], system=system)
    pairs = [
        ("predicted", result.predicted),
        ("variant", m["residual"]),
        ("iterations", result.solve.iterations),
        ("converged", str(result.solve.converged).lower()),
    ]
    if true_label is not None:
        pairs.append(("true_label", true_label))
        pairs.append(("correct", str(result.predicted == true_label).lower()))
    pairs += [
        (f"residual_{label}", f"{value:.6e}") for label, value in result.residuals.items()
    ]
    _print_kv(pairs)
    return 0


def _print_report(report) -> None:
    print(f"{'axis':<10} {'value':>10} {'accuracy':>9} {'correct':>8} "
          f"{'total':>6} {'mean_iters':>10} {'converged':>9}")
    for r in report.rows:
        print(f"{r.axis:<10} {r.value:>10.4g} {r.accuracy:>8.2f}% {r.correct:>8} "
              f"{r.total:>6} {r.mean_iterations:>10.1f} {r.converged_count:>9}")


def _cmd_experiment(args) -> int:
    m = _merged(args)
    occ = m["occlusion"] if m["occlusion"] is not None else DEFAULT_OCCLUSIONS
    cfg = _experiment_config(m, occlusions=occ)
    report = run_experiment(cfg)
    _print_report(report)
    if cfg.out_dir is not None:
        write_gnuplot_script(report, cfg.out_dir / "plot.gp")
        print(f"reports = {cfg.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    m = _merged(args)
    occ = m["occlusion"] if m["occlusion"] is not None else (0.3,)
    cfg = _experiment_config(m, occlusions=occ)
    report = sweep_parameters(cfg)
    _print_report(report)
    if cfg.out_dir is not None:
        write_gnuplot_script(report, cfg.out_dir / "plot.gp")
        print(f"reports = {cfg.out_dir}")
    return 0


def _cmd_diagnose(args) -> int:
    m = _merged(args)
    dims = _parse_dims(args.dims) if args.dims else None
    occluded = load_image(args.occluded, dims)
    clean = load_image(args.clean, dims)
    diag = diagnose_error(occluded, clean, bins=args.bins)
    _print_kv(
        [
            ("numerical_rank", diag.numerical_rank),
            ("min_dim", diag.min_dim),
            ("pixel_bins", len(diag.pixel_counts)),
            ("singular_bins", len(diag.singular_counts)),
        ]
    )
    if m["out"] is not None:
        out_dir = Path(m["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "error_histogram.csv"
        write_diagnosis_csv(diag, path)
        print(f"histogram_csv = {path}")
    return 0


def _cmd_synth(args) -> int:
    m = _merged(args)
    if m["out"] is None:
        raise ConfigError("synth needs --out DIR to write the dataset")
    dictionary, tests = generate_synthetic_dataset(
        seed=m["seed"],
        n_classes=m["classes"],
        per_class=m["per_class"],
        dims=m["dims"],
        noise_sigma=m["noise_sigma"],
        test_per_class=_resolved_test_per_class(m),
    )
    root = Path(m["out"])
    root.mkdir(parents=True, exist_ok=True)
    # Zero-padded numeric names keep the manifest's lexicographic split:
    # the first per_class files are training atoms, the rest are test.
    counters: dict[int, int] = {}
    for atom, label in zip(dictionary.atoms, dictionary.labels):
        label = int(label)
        (root / str(label)).mkdir(exist_ok=True)
        idx = counters.get(label, 0)
        save_image(atom, root / str(label) / f"{idx:04d}.pgm")
        counters[label] = idx + 1
    for img, label in tests:
        idx = counters.get(label, 0)
        save_image(img, root / str(label) / f"{idx:04d}.pgm")
        counters[label] = idx + 1
    # The manifest lives inside the dataset, so it declares its own
    # directory as the root; read_manifest resolves that relative to the
    # manifest location, keeping the tree relocatable.
    manifest = DatasetManifest(
        root=Path("."),
        per_class_count=m["per_class"],
        dims=m["dims"],
        test_per_class=_resolved_test_per_class(m),
        classes=dictionary.classes,
    )
    write_manifest(manifest, root / "manifest.txt")
    _print_kv(
        [
            ("root", root),
            ("manifest", root / "manifest.txt"),
            ("classes", len(dictionary.classes)),
            ("train_per_class", m["per_class"]),
            ("test_per_class", _resolved_test_per_class(m)),
        ]
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posereg",
        description="Nuclear-norm regularized regression for pose classification "
        "under block occlusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one image and print coefficients/residuals")
    _add_common_flags(p)
    p.add_argument("--image", type=Path, help="image file; omit to use a held-out test image")
    p.add_argument("--test-index", type=int, default=0,
                   help="held-out test image index when --image is omitted")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("classify", help="classify one image")
    _add_common_flags(p)
    p.add_argument("--image", type=Path, help="image file; omit to use a held-out test image")
    p.add_argument("--test-index", type=int, default=0)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("experiment", help="accuracy vs occlusion curve")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("sweep", help="accuracy vs one parameter grid")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("diagnose", help="error histograms for an occluded/clean image pair")
    _add_common_flags(p)
    p.add_argument("--occluded", type=Path, required=True)
    p.add_argument("--clean", type=Path, required=True)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("synth", help="write a synthetic dataset and manifest to disk")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PoseRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
