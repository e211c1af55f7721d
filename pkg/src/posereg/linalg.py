"""Dense-matrix primitives and proximal operators.

All functions are pure and operate on float64 numpy arrays. Vectorization
order is column-major everywhere; every consumer of :func:`vectorize` relies
on that single fixed convention.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SingularTriple:
    """Thin SVD of a matrix: ``U @ diag(S) @ V.T`` reconstructs the input.

    Attributes
    ----------
    U : ndarray, shape (m, r)
        Orthonormal columns (left singular vectors).
    S : ndarray, shape (r,)
        Singular values, non-increasing, all >= 0.
    V : ndarray, shape (n, r)
        Orthonormal columns (right singular vectors).
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def svd_triple(M: np.ndarray) -> SingularTriple:
    """Compute the thin SVD of ``M`` as a :class:`SingularTriple`.

    Raises
    ------
    NumericalError
        If the SVD iteration fails to converge.
    """
    try:
        U, s, Vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge on a {M.shape} matrix") from exc
    return SingularTriple(U=U, S=s, V=Vt.T)


def vectorize(M: np.ndarray) -> np.ndarray:
    """Stack the columns of ``M`` into a single vector.

    Column-major order: for ``[[1, 3], [2, 4]]`` the result is
    ``(1, 2, 3, 4)``. This is a linear bijection, so sums and norms carry
    over: ``vectorize(A + B) == vectorize(A) + vectorize(B)`` and
    ``norm(vectorize(M)) == frobenius_norm(M)``.
    """
    return np.asarray(M, dtype=float).ravel(order="F")


def unvectorize(v: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`vectorize` for a known matrix shape."""
    return np.asarray(v, dtype=float).reshape(shape, order="F")


def frobenius_norm(M: np.ndarray) -> float:
    """Frobenius norm: sqrt of the sum of squared entries."""
    return float(np.linalg.norm(M, "fro")) if np.ndim(M) == 2 else float(np.linalg.norm(M))


def nuclear_norm(M: np.ndarray) -> float:
    """Nuclear norm: sum of the singular values of ``M``."""
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False).sum())


def svt(M: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal operator of the nuclear norm.

    Computes ``U @ diag(max(s - tau, 0)) @ V.T`` from the thin SVD of ``M``.
    The result is the exact minimizer of ``tau*||X||_* + 0.5*||X - M||_F^2``.

    Parameters
    ----------
    M : ndarray, shape (m, n)
    tau : float
        Shrinkage threshold, must be >= 0.

    Returns
    -------
    ndarray, shape (m, n)
    """
    if tau < 0:
        raise ValueError(f"svt threshold must be >= 0, got {tau}")
    t = svd_triple(M)
    return (t.U * np.maximum(t.S - tau, 0.0)) @ t.V.T


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Componentwise soft thresholding, the proximal operator of the l1 norm.

    Each component moves toward zero by ``tau`` and clamps at zero:
    ``v - tau`` where ``v > tau``, ``v + tau`` where ``v < -tau``, else 0.
    Exact minimizer of ``tau*||x||_1 + 0.5*||x - v||_2^2``.
    """
    if tau < 0:
        raise ValueError(f"soft threshold must be >= 0, got {tau}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def ridge_solve(H: np.ndarray, g: np.ndarray, rho: float) -> np.ndarray:
    """Solve the ridge normal equations ``(H.T H + rho*I) x = H.T g``.

    Uses a Cholesky factorization of the Gram matrix; never forms an
    explicit inverse. With ``rho == 0`` the Gram matrix must be positive
    definite; if factorization fails a small jitter proportional to the
    Gram trace is added once and the fallback is logged.

    Parameters
    ----------
    H : ndarray, shape (p, l)
    g : ndarray, shape (p,)
    rho : float
        Ridge weight, must be >= 0.

    Returns
    -------
    ndarray, shape (l,)

    Raises
    ------
    NumericalError
        If factorization fails even after jitter, reporting the estimated
        condition number.
    """
    if rho < 0:
        raise ValueError(f"ridge weight must be >= 0, got {rho}")
    H = np.asarray(H, dtype=float)
    G = H.T @ H
    ell = G.shape[0]
    rhs = H.T @ np.asarray(g, dtype=float)
    try:
        cf = cho_factor(G + rho * np.eye(ell), lower=True)
    except LinAlgError:
        jitter = 1e-10 * np.trace(G) / ell
        logger.warning(
            "Gram factorization failed at rho=%g; retrying with jitter %g", rho, jitter
        )
        try:
            cf = cho_factor(G + (rho + jitter) * np.eye(ell), lower=True)
        except LinAlgError as exc:
            cond = float(np.linalg.cond(G))
            raise NumericalError(
                f"Gram matrix not positive definite (estimated condition number {cond:.3e})"
            ) from exc
    return cho_solve(cf, rhs)
