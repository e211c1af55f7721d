"""Dictionary-based pose classification.

A test image is expressed over the training dictionary by the solver; each
pose class reconstructs the image from its own atoms only, and the label
with the smallest Frobenius reconstruction residual wins. Two residual
variants exist: ``plain`` compares Y against the class reconstruction
directly, ``error_compensated`` first subtracts the estimated structured
error E.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrainingDictionary, check_image_matrix
from .errors import ConfigError
from .linalg import frobenius_norm
from .solver import LinearSystem, SolveResult, SolverConfig, assemble_system, solve

RESIDUAL_VARIANTS = ("plain", "error_compensated")


@dataclass(frozen=True)
class ClassificationResult:
    """Predicted label with the full residual map and solver diagnostics."""

    predicted: int
    residuals: dict[int, float]
    solve: SolveResult


def _class_coefficients(sys: LinearSystem, x: np.ndarray, label: int) -> np.ndarray:
    mask = sys.column_labels == label
    if not mask.any():
        raise ConfigError(f"pose {label} has no atoms in this dictionary")
    return np.where(mask, x, 0.0)


def reconstruct_class(
    dictionary: TrainingDictionary,
    x: np.ndarray,
    label: int,
    system: LinearSystem | None = None,
) -> np.ndarray:
    """Reconstruction from one class's atoms only: coefficients outside the
    class are zeroed before applying the dictionary."""
    sys = assemble_system(dictionary) if system is None else system
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.size,):
        raise ConfigError(f"coefficient vector has shape {x.shape}, expected ({sys.size},)")
    return sys.reconstruct(_class_coefficients(sys, x, label))


def class_residuals(
    dictionary: TrainingDictionary,
    x: np.ndarray,
    Y: np.ndarray,
    E: np.ndarray | None = None,
    system: LinearSystem | None = None,
) -> dict[int, float]:
    """Frobenius residual of each class's reconstruction against Y.

    With ``E`` given, the estimated error is subtracted first (the
    error-compensated variant); otherwise the comparison is plain.
    """
    sys = assemble_system(dictionary) if system is None else system
    Y = check_image_matrix(Y, "test image")
    target = Y if E is None else Y - E
    out: dict[int, float] = {}
    for label in dictionary.classes:
        recon = sys.reconstruct(_class_coefficients(sys, np.asarray(x, float), label))
        out[int(label)] = frobenius_norm(target - recon)
    return out


def pick_label(residuals: dict[int, float]) -> int:
    """Argmin label; ties break to the smallest yaw magnitude, then to the
    negative angle."""
    return min(residuals, key=lambda c: (residuals[c], abs(c), c))


def classify(
    dictionary: TrainingDictionary,
    Y: np.ndarray,
    cfg: SolverConfig,
    variant: str = "plain",
    system: LinearSystem | None = None,
) -> ClassificationResult:
    """Solve for coefficients, then assign the minimum-residual pose label.

    A solve that hits the iteration cap still classifies from its last
    iterate; ``result.solve.converged`` records that it did. ``system``
    may pass a pre-assembled design matrix shared across many calls.
    """
    if variant not in RESIDUAL_VARIANTS:
        raise ConfigError(f"residual variant must be one of {RESIDUAL_VARIANTS}, got {variant!r}")
    sys = assemble_system(dictionary) if system is None else system
    result = solve(dictionary, Y, cfg, system=sys)
    residuals = class_residuals(
        dictionary,
        result.x,
        Y,
        E=result.E if variant == "error_compensated" else None,
        system=sys,
    )
    return ClassificationResult(
        predicted=pick_label(residuals), residuals=residuals, solve=result
    )
