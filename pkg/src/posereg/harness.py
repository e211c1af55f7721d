"""Experiment harness: occlusion curves, parameter sweeps, and error
diagnostics with reproducible CSV reports.

Reports are split into three files so the accuracy artifacts are
byte-identical across repeated runs of the same seeded configuration:
``accuracy.csv`` and ``confusion.csv`` carry only deterministic values,
``timing.csv`` carries wall-clock measurements. Every CSV starts with a
schema-id comment line.

Classification of the test images is embarrassingly parallel; ``jobs``
controls a thread pool (the solver's inner loop is BLAS-bound and releases
the GIL). Results are reduced in canonical image order regardless of
completion order, so parallelism never changes any report value.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classify import RESIDUAL_VARIANTS, classify
from .data import (
    DatasetManifest,
    OcclusionSpec,
    TrainingDictionary,
    apply_block_occlusion,
    build_dictionary,
    check_image_matrix,
    generate_synthetic_dataset,
    load_test_set,
    occlusion_stream_seed,
    read_manifest,
)
from .errors import ConfigError, DataError
from .solver import MODES, SolverConfig, assemble_system

ACCURACY_SCHEMA = "posereg/accuracy/v1"
CONFUSION_SCHEMA = "posereg/confusion/v1"
TIMING_SCHEMA = "posereg/timing/v1"
DIAGNOSE_SCHEMA = "posereg/error-histogram/v1"

# Default occlusion grid: 10% to 80% per axis in steps of 10.
DEFAULT_OCCLUSIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generated dataset used when no manifest is given.
    The test count per class lives on :class:`ExperimentConfig`."""

    n_classes: int = 7
    per_class: int = 50
    dims: tuple[int, int] = (64, 64)
    noise_sigma: float = 0.03


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs: data source, solver parameters (single
    values or one grid), occlusion levels, residual variant, seed, output.

    ``lam``, ``eta``, ``mu`` each hold either a float or a tuple of floats;
    tuples are parameter grids (used by sweeps).
    """

    manifest: Path | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    mode: str = "l2"
    lam: float | tuple[float, ...] = 0.1
    eta: float | tuple[float, ...] | None = None
    mu: float | tuple[float, ...] = 1.0
    epsilon: float = 1e-6
    max_iters: int = 500
    occlusions: tuple[float, ...] = DEFAULT_OCCLUSIONS
    fill_value: float = 0.0
    residual: str = "plain"
    test_per_class: int = 20
    seed: int = 0
    jobs: int = 1
    out_dir: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", str(self.mode).lower())
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eta is None:
            # eta scales an l2-squared penalty in l2 mode but a soft
            # threshold in l1 mode; sensible defaults differ by orders of
            # magnitude.
            object.__setattr__(self, "eta", 4000.0 if self.mode == "l2" else 0.1)
        for name in ("lam", "eta", "mu"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple, np.ndarray)):
                # a tuple is a grid even with one point, so that one-point
                # sweeps stay expressible; scalars mean "not swept"
                values = tuple(float(v) for v in value)
                if not values:
                    raise ConfigError(f"{name} grid must be non-empty")
                object.__setattr__(self, name, values)
            else:
                object.__setattr__(self, name, float(value))
        occ = tuple(float(v) for v in self.occlusions)
        if not occ:
            raise ConfigError("occlusion list must be non-empty")
        for v in occ:
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"occlusion fractions must be in [0, 1], got {v}")
        object.__setattr__(self, "occlusions", occ)
        if self.residual not in RESIDUAL_VARIANTS:
            raise ConfigError(
                f"residual must be one of {RESIDUAL_VARIANTS}, got {self.residual!r}"
            )
        if self.test_per_class < 1:
            raise ConfigError(f"test_per_class must be >= 1, got {self.test_per_class}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.manifest is not None and not isinstance(self.manifest, DatasetManifest):
            object.__setattr__(self, "manifest", Path(self.manifest))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))

    def grid_axes(self) -> list[str]:
        return [n for n in ("lam", "eta", "mu") if isinstance(getattr(self, n), tuple)]

    def solver_config(self, **overrides) -> SolverConfig:
        values = dict(lam=self.lam, eta=self.eta, mu=self.mu)
        values.update(overrides)
        for name, v in values.items():
            if isinstance(v, tuple):
                raise ConfigError(f"{name} is a grid; this operation needs a single value")
        return SolverConfig(
            lam=values["lam"],
            eta=values["eta"],
            mu=values["mu"],
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            mode=self.mode,
        )


@dataclass(frozen=True)
class ReportRow:
    """One grid point or occlusion level of an experiment."""

    axis: str
    value: float
    accuracy: float
    correct: int
    total: int
    confusion: dict[tuple[int, int], int]
    mean_iterations: float
    converged_count: int
    wall_seconds: float


@dataclass(frozen=True)
class ExperimentReport:
    """All rows of a run plus the configuration echo."""

    rows: list[ReportRow]
    config: ExperimentConfig
    seed: int
    classes: tuple[int, ...]

    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.rows]


def load_dataset(
    cfg: ExperimentConfig,
) -> tuple[TrainingDictionary, list[tuple[np.ndarray, int]]]:
    """Resolve the configured data source into (dictionary, test set)."""
    if cfg.manifest is not None:
        manifest = cfg.manifest
        if not isinstance(manifest, DatasetManifest):
            manifest = read_manifest(manifest)
        dictionary = build_dictionary(manifest)
        tests = load_test_set(manifest)
        per_class: dict[int, int] = {}
        kept = []
        for img, label in tests:
            per_class[label] = per_class.get(label, 0) + 1
            if per_class[label] <= cfg.test_per_class:
                kept.append((img, label))
        short = [c for c in dictionary.classes if per_class.get(c, 0) < cfg.test_per_class]
        if short:
            raise DataError(
                f"manifest test split has fewer than {cfg.test_per_class} "
                f"images for classes {short}"
            )
        return dictionary, kept
    spec = cfg.synthetic
    return generate_synthetic_dataset(
        seed=cfg.seed,
        n_classes=spec.n_classes,
        per_class=spec.per_class,
        dims=spec.dims,
        noise_sigma=spec.noise_sigma,
        test_per_class=cfg.test_per_class,
    )


def _classify_batch(dictionary, system, tests, solver_cfg, variant, occ_fraction,
                    fill_value, seed, level_index, jobs):
    """Occlude and classify every test image; canonical (input) order."""

    def one(item):
        index, (img, label) = item
        occluded = img
        if occ_fraction > 0:
            spec = OcclusionSpec(
                axis_fraction=occ_fraction,
                fill_value=fill_value,
                seed=occlusion_stream_seed(seed, level_index, index),
            )
            occluded = apply_block_occlusion(img, spec)
        result = classify(dictionary, occluded, solver_cfg, variant=variant, system=system)
        return label, result

    items = list(enumerate(tests))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, items))
    else:
        outcomes = [one(it) for it in items]
    return outcomes


def _tally(axis: str, value: float, outcomes, classes, wall_seconds: float) -> ReportRow:
    correct = 0
    confusion = {(t, p): 0 for t in classes for p in classes}
    iterations = []
    converged = 0
    for label, result in outcomes:
        confusion[(label, result.predicted)] += 1
        correct += int(result.predicted == label)
        iterations.append(result.solve.iterations)
        converged += int(result.solve.converged)
    total = len(outcomes)
    return ReportRow(
        axis=axis,
        value=value,
        accuracy=100.0 * correct / total,
        correct=correct,
        total=total,
        confusion=confusion,
        mean_iterations=float(np.mean(iterations)),
        converged_count=converged,
        wall_seconds=wall_seconds,
    )


class _ReportWriter:
    """Incremental CSV writer: completed rows are on disk even if a later
    level aborts."""

    def __init__(self, out_dir: Path | None, config: ExperimentConfig, classes):
        self.out_dir = out_dir
        self.classes = classes
        if out_dir is None:
            return
        out_dir.mkdir(parents=True, exist_ok=True)
        self.acc = (out_dir / "accuracy.csv").open("w")
        self.acc.write(f"# schema: {ACCURACY_SCHEMA}\n")
        self.acc.write(f"# seed: {config.seed}\n")
        self.acc.write("axis,value,accuracy_pct,correct,total,mean_iterations,converged\n")
        self.conf = (out_dir / "confusion.csv").open("w")
        self.conf.write(f"# schema: {CONFUSION_SCHEMA}\n")
        self.conf.write("axis,value,true_label,predicted_label,count\n")
        self.tim = (out_dir / "timing.csv").open("w")
        self.tim.write(f"# schema: {TIMING_SCHEMA}\n")
        self.tim.write("axis,value,wall_seconds\n")

    def write_row(self, row: ReportRow) -> None:
        if self.out_dir is None:
            return
        self.acc.write(
            f"{row.axis},{row.value:.6g},{row.accuracy:.4f},{row.correct},"
            f"{row.total},{row.mean_iterations:.4f},{row.converged_count}\n"
        )
        for t in self.classes:
            for p in self.classes:
                self.conf.write(
                    f"{row.axis},{row.value:.6g},{t},{p},{row.confusion[(t, p)]}\n"
                )
        self.tim.write(f"{row.axis},{row.value:.6g},{row.wall_seconds:.3f}\n")
        for f in (self.acc, self.conf, self.tim):
            f.flush()

    def close(self) -> None:
        if self.out_dir is None:
            return
        for f in (self.acc, self.conf, self.tim):
            f.close()


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Accuracy versus occlusion: for every configured occlusion level,
    occlude each test image with its own derived seed, classify, and tally.

    Deterministic for a fixed config: occlusion placement depends only on
    (seed, level index, image index). With ``out_dir`` set, rows are
    flushed to CSV as each level completes.
    """
    if cfg.grid_axes():
        raise ConfigError(
            f"run_experiment needs single parameter values; grids on "
            f"{cfg.grid_axes()} belong to sweep_parameters"
        )
    dictionary, tests = load_dataset(cfg)
    system = assemble_system(dictionary)
    solver_cfg = cfg.solver_config()
    classes = dictionary.classes
    writer = _ReportWriter(cfg.out_dir, cfg, classes)
    rows: list[ReportRow] = []
    try:
        for level_index, fraction in enumerate(cfg.occlusions):
            t0 = time.perf_counter()
            outcomes = _classify_batch(
                dictionary, system, tests, solver_cfg, cfg.residual,
                fraction, cfg.fill_value, cfg.seed, level_index, cfg.jobs,
            )
            row = _tally("occlusion", fraction, outcomes, classes,
                         time.perf_counter() - t0)
            rows.append(row)
            writer.write_row(row)
    finally:
        writer.close()
    return ExperimentReport(rows=rows, config=cfg, seed=cfg.seed, classes=classes)


def sweep_parameters(cfg: ExperimentConfig) -> ExperimentReport:
    """One-at-a-time parameter sweep: exactly one of lam/eta/mu carries a
    grid; every grid value is evaluated on the same occluded test set.

    The occlusion list must hold a single fraction so that the sweep axis
    is the only thing varying.
    """
    axes = cfg.grid_axes()
    if len(axes) != 1:
        raise ConfigError(
            f"sweep_parameters needs exactly one parameter grid, got {axes or 'none'}"
        )
    if len(cfg.occlusions) != 1:
        raise ConfigError(
            f"sweep_parameters needs a single occlusion fraction, got {cfg.occlusions}"
        )
    axis = axes[0]
    grid = getattr(cfg, axis)
    fraction = cfg.occlusions[0]
    dictionary, tests = load_dataset(cfg)
    system = assemble_system(dictionary)
    classes = dictionary.classes
    writer = _ReportWriter(cfg.out_dir, cfg, classes)
    rows: list[ReportRow] = []
    try:
        for value in grid:
            solver_cfg = cfg.solver_config(**{axis: value})
            t0 = time.perf_counter()
            outcomes = _classify_batch(
                dictionary, system, tests, solver_cfg, cfg.residual,
                fraction, cfg.fill_value, cfg.seed, 0, cfg.jobs,
            )
            row = _tally(axis, value, outcomes, classes, time.perf_counter() - t0)
            rows.append(row)
            writer.write_row(row)
    finally:
        writer.close()
    return ExperimentReport(rows=rows, config=cfg, seed=cfg.seed, classes=classes)


@dataclass(frozen=True)
class ErrorDiagnosis:
    """Histograms of an error image: pixel values and singular values."""

    pixel_counts: np.ndarray
    pixel_edges: np.ndarray
    singular_counts: np.ndarray
    singular_edges: np.ndarray
    numerical_rank: int
    min_dim: int


def diagnose_error(
    Y_occluded: np.ndarray, Y_clean: np.ndarray, bins: int = 20
) -> ErrorDiagnosis:
    """Distribution of the error between an occluded image and its clean
    original: a pixel-value histogram over [-1, 1] and a singular-value
    histogram over [0, max singular value]."""
    if bins < 2:
        raise ConfigError(f"bins must be >= 2, got {bins}")
    Y_occluded = check_image_matrix(Y_occluded, "occluded image")
    Y_clean = check_image_matrix(Y_clean, "clean image")
    if Y_occluded.shape != Y_clean.shape:
        raise DataError(
            f"image shapes differ: {Y_occluded.shape} vs {Y_clean.shape}"
        )
    E = Y_occluded - Y_clean
    pixel_counts, pixel_edges = np.histogram(E.ravel(), bins=bins, range=(-1.0, 1.0))
    sv = np.linalg.svd(E, compute_uv=False)
    sv_top = float(sv.max()) if sv.size else 0.0
    singular_counts, singular_edges = np.histogram(
        sv, bins=bins, range=(0.0, sv_top if sv_top > 0 else 1.0)
    )
    rank = int(np.linalg.matrix_rank(E, tol=1e-10))
    return ErrorDiagnosis(
        pixel_counts=pixel_counts,
        pixel_edges=pixel_edges,
        singular_counts=singular_counts,
        singular_edges=singular_edges,
        numerical_rank=rank,
        min_dim=min(E.shape),
    )


def write_diagnosis_csv(diag: ErrorDiagnosis, path: Path | str) -> None:
    path = Path(path)
    with path.open("w") as f:
        f.write(f"# schema: {DIAGNOSE_SCHEMA}\n")
        f.write(f"# numerical_rank: {diag.numerical_rank}\n")
        f.write(f"# min_dim: {diag.min_dim}\n")
        f.write("histogram,bin_left,bin_right,count\n")
        for i, c in enumerate(diag.pixel_counts):
            f.write(
                f"pixel,{diag.pixel_edges[i]:.6g},{diag.pixel_edges[i + 1]:.6g},{int(c)}\n"
            )
        for i, c in enumerate(diag.singular_counts):
            f.write(
                f"singular,{diag.singular_edges[i]:.6g},"
                f"{diag.singular_edges[i + 1]:.6g},{int(c)}\n"
            )


def write_gnuplot_script(report: ExperimentReport, path: Path | str) -> None:
    """Companion plot script for an accuracy CSV (plots are not emitted by
    the tool itself)."""
    path = Path(path)
    axis = report.rows[0].axis if report.rows else "occlusion"
    path.write_text(
        "set datafile separator ','\n"
        "set datafile commentschars '#'\n"
        f"set xlabel '{axis}'\n"
        "set ylabel 'accuracy (%)'\n"
        "set yrange [0:105]\n"
        "set key off\n"
        "plot 'accuracy.csv' skip 3 using 2:3 with linespoints\n"
    )
