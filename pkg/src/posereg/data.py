"""Image ingestion, dictionary construction, block occlusion, and the
synthetic dataset generator.

A pose label is the integer yaw angle in degrees; the seven supported
angles are listed in :data:`POSE_ANGLES`. Datasets on disk follow the
layout ``root/<yaw>/<image files>`` with a flat key-value manifest file
describing the split.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

# Yaw angles, ascending. Class k of a synthetic dataset maps to POSE_ANGLES[k].
POSE_ANGLES: tuple[int, ...] = (-90, -60, -30, 0, 30, 60, 90)

PoseLabel = int

# Formats accepted by load_image; binary PGM is the canonical one.
IMAGE_SUFFIXES = {".pgm", ".png", ".bmp", ".tif", ".tiff", ".ppm"}

# Salt separating the dataset-sampling stream from occlusion streams that
# are derived from the same master seed.
_DATASET_STREAM = 0xDA7A


def validate_pose(yaw: int) -> int:
    yaw = int(yaw)
    if yaw not in POSE_ANGLES:
        raise ConfigError(f"unknown pose angle {yaw}; expected one of {POSE_ANGLES}")
    return yaw


def check_image_matrix(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D finite real matrix and return it as float64."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise DataError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DataError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class TrainingDictionary:
    """Ordered training atoms with parallel pose labels.

    Attributes
    ----------
    atoms : ndarray, shape (l, m, n)
        Training images in dictionary order.
    labels : ndarray of int, shape (l,)
        Pose label of each atom.
    per_class_count : int
        Number of atoms per class (uniform across classes).
    """

    atoms: np.ndarray
    labels: np.ndarray
    per_class_count: int

    def __post_init__(self):
        if isinstance(self.atoms, (list, tuple)):
            shapes = [np.shape(a) for a in self.atoms]
            for i, s in enumerate(shapes):
                if s != shapes[0]:
                    raise DataError(
                        f"atom {i} has shape {s}, expected {shapes[0]} like atom 0"
                    )
            atoms = np.stack([np.asarray(a, dtype=float) for a in self.atoms])
        else:
            atoms = np.asarray(self.atoms, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if atoms.ndim != 3 or atoms.shape[0] == 0:
            raise DataError(f"atoms must be a non-empty (l, m, n) stack, got shape {atoms.shape}")
        if labels.shape != (atoms.shape[0],):
            raise DataError(
                f"labels length {labels.shape} does not match atom count {atoms.shape[0]}"
            )
        if not np.all(np.isfinite(atoms)):
            bad = int(np.argwhere(~np.isfinite(atoms).all(axis=(1, 2)))[0, 0])
            raise DataError(f"atom {bad} contains non-finite entries")
        for yaw in labels:
            validate_pose(yaw)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_dims(self) -> tuple[int, int]:
        return self.atoms.shape[1], self.atoms.shape[2]

    @property
    def classes(self) -> tuple[int, ...]:
        """Distinct labels in ascending yaw order."""
        return tuple(sorted(set(int(v) for v in self.labels)))

    def normalized(self) -> "TrainingDictionary":
        """Copy with every atom scaled to unit Frobenius norm."""
        norms = np.linalg.norm(self.atoms.reshape(self.size, -1), axis=1)
        if np.any(norms == 0):
            raise DataError("cannot normalize a dictionary containing an all-zero atom")
        return TrainingDictionary(
            atoms=self.atoms / norms[:, None, None],
            labels=self.labels,
            per_class_count=self.per_class_count,
        )


@dataclass(frozen=True)
class OcclusionSpec:
    """A seeded square block occlusion.

    ``axis_fraction`` is the block side length as a fraction of each image
    axis (area fraction is its square). The block is filled with
    ``fill_value`` and its top-left corner is drawn uniformly from valid
    positions by a counter-based generator keyed on ``seed``.
    """

    axis_fraction: float
    fill_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.axis_fraction <= 1.0:
            raise ConfigError(f"axis_fraction must be in [0, 1], got {self.axis_fraction}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ConfigError(f"fill_value must be in [0, 1], got {self.fill_value}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class DatasetManifest:
    """Description of an on-disk dataset: root directory, declared classes,
    split sizes, and preprocessing dimensions.

    The split is declared by counts over the lexicographically name-sorted
    files of each class directory: the first ``per_class_count`` files are
    training atoms, the next ``test_per_class`` are the held-out test set.
    """

    root: Path
    per_class_count: int
    dims: tuple[int, int] = (64, 64)
    test_per_class: int = 0
    classes: tuple[int, ...] = POSE_ANGLES

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.per_class_count < 1:
            raise ConfigError(f"per_class_count must be >= 1, got {self.per_class_count}")
        if self.test_per_class < 0:
            raise ConfigError(f"test_per_class must be >= 0, got {self.test_per_class}")
        if len(self.dims) != 2 or self.dims[0] < 1 or self.dims[1] < 1:
            raise ConfigError(f"dims must be two positive integers, got {self.dims}")
        if not self.classes:
            raise ConfigError("manifest declares no classes")
        object.__setattr__(
            self, "classes", tuple(validate_pose(c) for c in self.classes)
        )


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat ``key = value`` text: one pair per line, ``#`` comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_dims(value: str, source: str) -> tuple[int, int]:
    parts = value.lower().replace("x", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"{source}: dims must look like '64x64', got {value!r}")
    return int(parts[0]), int(parts[1])


def read_manifest(path: Path | str) -> DatasetManifest:
    """Read a flat key-value manifest file.

    Recognized keys: ``root`` (default: the manifest's directory),
    ``per_class_count``, ``test_per_class``, ``dims``, ``classes``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    kv = parse_key_values(text, source=str(path))
    try:
        per_class = int(kv["per_class_count"])
    except KeyError:
        raise ConfigError(f"{path}: manifest is missing per_class_count") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: bad per_class_count: {exc}") from None
    root = Path(kv["root"]) if "root" in kv else path.parent
    if not root.is_absolute():
        root = path.parent / root
    try:
        dims = _parse_dims(kv["dims"], str(path)) if "dims" in kv else (64, 64)
        test_per_class = int(kv.get("test_per_class", "0"))
        classes = (
            tuple(int(c) for c in kv["classes"].replace(",", " ").split())
            if "classes" in kv
            else POSE_ANGLES
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return DatasetManifest(
        root=root,
        per_class_count=per_class,
        dims=dims,
        test_per_class=test_per_class,
        classes=classes,
    )


def write_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    lines = [
        f"root = {manifest.root}",
        f"per_class_count = {manifest.per_class_count}",
        f"test_per_class = {manifest.test_per_class}",
        f"dims = {manifest.dims[0]}x{manifest.dims[1]}",
        f"classes = {','.join(str(c) for c in manifest.classes)}",
    ]
    path.write_text("\n".join(lines) + "\n")


def load_image(path: Path | str, target_dims: tuple[int, int] | None) -> np.ndarray:
    """Load one image as a float64 matrix with entries in [0, 1].

    Color images are reduced to luminance (0.299 R + 0.587 G + 0.114 B).
    The image is center-cropped to the largest window with the target
    aspect ratio, then bilinearly resized to ``target_dims`` (rows, cols).
    ``target_dims=None`` keeps the native size (diagnostics accept any
    dimensions).

    Raises
    ------
    DataError
        Unreadable or corrupt file, or source smaller than 8x8.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("L", "I;16", "I"):
                # Pillow's L conversion uses the 0.299/0.587/0.114 weights.
                img = img.convert("L")
            W, Hh = img.size
            if W < 8 or Hh < 8:
                raise DataError(f"{path}: image {W}x{Hh} is smaller than 8x8")
            if target_dims is not None:
                tm, tn = target_dims
                # Largest centered window with the target aspect ratio.
                if W * tm >= Hh * tn:
                    ch, cw = Hh, max(1, round(Hh * tn / tm))
                else:
                    cw, ch = W, max(1, round(W * tm / tn))
                left, top = (W - cw) // 2, (Hh - ch) // 2
                img = img.crop((left, top, left + cw, top + ch))
                img = img.resize((tn, tm), Image.Resampling.BILINEAR)
            arr = np.asarray(img, dtype=float)
    except DataError:
        raise
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot load image {path}: {exc}") from exc
    scale = 65535.0 if arr.max() > 255.0 else 255.0
    return np.clip(arr / scale, 0.0, 1.0)


def save_image(M: np.ndarray, path: Path | str) -> None:
    """Write a [0, 1] matrix as an 8-bit raster; format follows the suffix
    (``.pgm`` produces binary P5)."""
    M = check_image_matrix(M, "image")
    arr = np.clip(np.round(M * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path))


def _class_files(manifest: DatasetManifest, yaw: int) -> list[Path]:
    class_dir = manifest.root / str(yaw)
    if not class_dir.is_dir():
        raise DataError(f"class directory missing for pose {yaw}: {class_dir}")
    files = sorted(
        (p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    needed = manifest.per_class_count + manifest.test_per_class
    if len(files) < needed:
        raise DataError(
            f"pose {yaw}: {class_dir} has {len(files)} images, manifest needs {needed}"
        )
    return files


def build_dictionary(manifest: DatasetManifest, normalize: bool = False) -> TrainingDictionary:
    """Build the training dictionary from a manifest.

    Atom order is deterministic: classes in ascending yaw, files in
    lexicographic name order, first ``per_class_count`` files per class.
    """
    atoms, labels = [], []
    for yaw in sorted(manifest.classes):
        files = _class_files(manifest, yaw)
        for p in files[: manifest.per_class_count]:
            atoms.append(load_image(p, manifest.dims))
            labels.append(yaw)
    d = TrainingDictionary(
        atoms=np.stack(atoms), labels=np.array(labels), per_class_count=manifest.per_class_count
    )
    return d.normalized() if normalize else d


def load_test_set(manifest: DatasetManifest) -> list[tuple[np.ndarray, int]]:
    """Load the held-out test images declared by the manifest split."""
    out = []
    for yaw in sorted(manifest.classes):
        files = _class_files(manifest, yaw)
        start = manifest.per_class_count
        for p in files[start : start + manifest.test_per_class]:
            out.append((load_image(p, manifest.dims), yaw))
    return out


def apply_block_occlusion(img: np.ndarray, spec: OcclusionSpec) -> np.ndarray:
    """Overwrite one seeded square block of ``img`` with the fill value.

    Side lengths are ``round(axis_fraction * axis)`` per axis; the top-left
    corner is uniform over valid positions under a Philox counter-based
    stream keyed on ``spec.seed``, so placement is reproducible across
    platforms and processes.
    """
    img = check_image_matrix(img, "image")
    m, n = img.shape
    s_r = int(np.floor(spec.axis_fraction * m + 0.5))
    s_c = int(np.floor(spec.axis_fraction * n + 0.5))
    out = img.copy()
    if s_r == 0 or s_c == 0:
        return out
    rng = np.random.Generator(np.random.Philox(key=int(spec.seed)))
    r0 = int(rng.integers(0, m - s_r + 1))
    c0 = int(rng.integers(0, n - s_c + 1))
    out[r0 : r0 + s_r, c0 : c0 + s_c] = spec.fill_value
    return out


def occlusion_stream_seed(master_seed: int, level_index: int, image_index: int) -> int:
    """Derive an independent 64-bit occlusion seed per (level, image)."""
    ss = np.random.SeedSequence((int(master_seed), int(level_index), int(image_index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def class_prototypes(n_classes: int, dims: tuple[int, int]) -> np.ndarray:
    """Smooth, well-separated class prototypes for the synthetic suite.

    Each prototype is an oriented intensity step (angle 2*pi*k/K) plus a
    contrast-placed dipole: a dark Gaussian bump in the bright half-plane
    and a bright bump at the mirrored position in the dark half. The dipole
    keeps the bumps from saturating away after clipping, which is what
    separates classes whose step orientations are close.
    """
    if not 1 <= n_classes <= len(POSE_ANGLES):
        raise ConfigError(f"n_classes must be in 1..{len(POSE_ANGLES)}, got {n_classes}")
    m, n = dims
    if m < 2 or n < 2:
        raise ConfigError(f"dims must be at least 2x2, got {dims}")
    gain, step_amp, bump_amp, bump_sigma, ring = 30.0, 0.49, 1.0, 0.13, 0.36
    ii, jj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    u = ii / (m - 1) - 0.5
    v = jj / (n - 1) - 0.5
    protos = np.empty((n_classes, m, n))
    for k in range(n_classes):
        theta = 2 * np.pi * k / n_classes
        t = np.cos(theta) * v + np.sin(theta) * u
        base = 0.5 + step_amp * np.tanh(gain * t)
        phi = 2 * np.pi * (k + 0.5) / n_classes
        ci, cj = ring * np.sin(phi), ring * np.cos(phi)
        dark = np.exp(-((u - ci) ** 2 + (v - cj) ** 2) / (2 * bump_sigma**2))
        bright = np.exp(-((u + ci) ** 2 + (v + cj) ** 2) / (2 * bump_sigma**2))
        protos[k] = np.clip(base - bump_amp * dark + bump_amp * bright, 0.0, 1.0)
    return protos


def generate_synthetic_dataset(
    seed: int,
    n_classes: int = 7,
    per_class: int = 50,
    dims: tuple[int, int] = (64, 64),
    noise_sigma: float = 0.03,
    test_per_class: int = 20,
) -> tuple[TrainingDictionary, list[tuple[np.ndarray, int]]]:
    """Generate a deterministic labeled dataset around class prototypes.

    Every sample is ``clip(prototype + N(0, noise_sigma^2), 0, 1)``. Class k
    carries pose label ``POSE_ANGLES[k]``. Returns the training dictionary
    and the held-out test list of (image, label) pairs.

    Raises
    ------
    ConfigError
        Invalid counts, or prototypes not separated enough for the noise
        level: every pairwise prototype Frobenius distance must exceed
        ``10 * noise_sigma * sqrt(m*n)``.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if test_per_class < 0:
        raise ConfigError(f"test_per_class must be >= 0, got {test_per_class}")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    protos = class_prototypes(n_classes, dims)
    m, n = dims
    required = 10.0 * noise_sigma * np.sqrt(m * n)
    for a in range(n_classes):
        for b in range(a + 1, n_classes):
            dist = float(np.linalg.norm(protos[a] - protos[b]))
            if dist <= required:
                raise ConfigError(
                    f"prototypes {a} and {b} are {dist:.3f} apart; separation must "
                    f"exceed {required:.3f} for noise_sigma={noise_sigma} at {m}x{n}"
                )
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), _DATASET_STREAM)))
    atoms, labels, tests = [], [], []
    for k in range(n_classes):
        yaw = POSE_ANGLES[k]
        for _ in range(per_class):
            atoms.append(np.clip(protos[k] + noise_sigma * rng.standard_normal(dims), 0.0, 1.0))
            labels.append(yaw)
        for _ in range(test_per_class):
            tests.append(
                (np.clip(protos[k] + noise_sigma * rng.standard_normal(dims), 0.0, 1.0), yaw)
            )
    dictionary = TrainingDictionary(
        atoms=np.stack(atoms), labels=np.array(labels), per_class_count=per_class
    )
    return dictionary, tests
