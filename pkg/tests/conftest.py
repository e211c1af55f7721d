"""Shared helpers: random instances and independent objective oracles.

Oracles here are deliberately written from the problem definitions with
plain numpy, not by calling the package's own primitives, so tests compare
two independent derivations.
"""

from __future__ import annotations

import numpy as np
import pytest

from posereg import TrainingDictionary, assemble_system
from posereg.data import POSE_ANGLES


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_dictionary(rng: np.random.Generator, m: int, n: int, l: int) -> TrainingDictionary:
    """l atoms of shape (m, n) with entries in [0, 1], labels cycling
    through distinct poses so classes are non-trivial."""
    atoms = rng.uniform(0.0, 1.0, size=(l, m, n))
    labels = np.array([POSE_ANGLES[i % len(POSE_ANGLES)] for i in range(l)])
    per_class = max(1, l // len(set(labels.tolist())))
    return TrainingDictionary(atoms=atoms, labels=labels, per_class_count=per_class)


def random_instance(rng: np.random.Generator, m: int = 8, n: int = 8, l: int = 3):
    """(dictionary, system, Y) with uniform [0,1] entries."""
    d = random_dictionary(rng, m, n, l)
    Y = rng.uniform(0.0, 1.0, size=(m, n))
    return d, assemble_system(d), Y


def lagrangian(H, x, E, Z, Y, lam, eta, mu, mode="l2") -> float:
    """Augmented Lagrangian of the constrained problem, written directly
    from its definition: fit + nuclear penalty + coefficient penalty +
    multiplier coupling + quadratic penalty on F(x) - Y - E."""
    m, n = Y.shape
    R = (H @ x).reshape((m, n), order="F") - Y - E
    fit = float(np.sum(E * E))
    nuclear = float(np.linalg.svd(E, compute_uv=False).sum())
    if mode == "l1":
        coef = 0.5 * eta * float(np.abs(x).sum())
    else:
        coef = 0.5 * eta * float(x @ x)
    return fit + lam * nuclear + coef + float(np.sum(Z * R)) + 0.5 * mu * float(np.sum(R * R))


def nuclear_prox_oracle(M: np.ndarray, tau: float, iters: int = 2000) -> np.ndarray:
    """Independent minimizer of tau*||X||_* + 0.5*||X - M||_F^2.

    Works on the dual: maximize <L, M> - 0.5*||L||_F^2 over the spectral
    ball ||L||_2 <= tau (projection clips singular values), then recovers
    the primal as X = M - L. Algorithmically disjoint from the shrinkage
    formula under test; converges linearly.
    """
    L = np.zeros_like(M, dtype=float)
    for _ in range(iters):
        L = L + 0.5 * (M - L)
        U, s, Vt = np.linalg.svd(L, full_matrices=False)
        L = (U * np.minimum(s, tau)) @ Vt
    return M - L


def nuclear_prox_objective(X: np.ndarray, M: np.ndarray, tau: float) -> float:
    return tau * float(np.linalg.svd(X, compute_uv=False).sum()) + 0.5 * float(
        np.sum((X - M) ** 2)
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(20260816)
