"""ADMM solver for nuclear-norm regularized regression.

The model expresses a test image Y as a linear combination of dictionary
atoms plus a structured error term:

    Y = F(x) + E,   F(x) = sum_i x_i A_i

and minimizes, over (x, E) subject to F(x) - Y = E,

    l2 mode:  ||E||_F^2 + lam*||E||_*  + (eta/2)*||x||_2^2
    l1 mode:  ||E||_F^2 + lam*||E||_*  + (eta/2)*||x||_1

The nuclear-norm term favors structured (low-rank-leaning) error such as a
contiguous occlusion block. Each ADMM iteration performs a coefficient
update (ridge solve in l2 mode, thresholded least squares in l1 mode), a
singular-value-thresholding error update, and a dual ascent step on the
multiplier Z. Per-step update functions are exposed so each step can be
tested in isolation; :func:`solve` runs the full loop.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import TrainingDictionary, check_image_matrix
from .errors import ConfigError, NumericalError
from .linalg import frobenius_norm, nuclear_norm, soft_threshold, svt, unvectorize, vectorize

MODES = ("l2", "l1")

# Abort when the constraint residual grows this many times past its initial
# value; together with the finiteness check this is the divergence guard.
_BLOWUP_FACTOR = 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    lam weights the nuclear norm of the error, eta the coefficient penalty
    (squared l2 norm in l2 mode, l1 norm in l1 mode), mu is the constant
    augmented-Lagrangian penalty, epsilon the stopping tolerance.
    """

    lam: float = 0.1
    eta: float = 4000.0
    mu: float = 1.0
    epsilon: float = 1e-6
    max_iters: int = 500
    mode: str = "l2"

    def __post_init__(self):
        object.__setattr__(self, "mode", str(self.mode).lower())
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be > 0, got {self.mu}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class SolverState:
    """Mutable per-solve iterates.

    ``alpha`` holds the least-squares intermediate of the most recent l1
    coefficient update (the pre-threshold solution); it is None in l2 mode
    and before the first l1 update.
    """

    x: np.ndarray
    E: np.ndarray
    Z: np.ndarray
    iteration: int = 0
    alpha: np.ndarray | None = None


@dataclass(frozen=True)
class SolveResult:
    """Final iterates plus convergence diagnostics."""

    x: np.ndarray
    E: np.ndarray
    iterations: int
    converged: bool
    constraint_residual: float
    objective: float


@dataclass(eq=False)
class LinearSystem:
    """Vectorized dictionary: column j of H is the column-major stacking of
    atom j. Caches the Gram matrix and its shifted Cholesky factorizations;
    safe to share across concurrent solves (factors are read-only once
    built, the cache is lock-guarded).
    """

    H: np.ndarray
    atom_dims: tuple[int, int]
    column_labels: np.ndarray
    _gram: np.ndarray | None = field(default=None, repr=False)
    _factors: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def size(self) -> int:
        return self.H.shape[1]

    def class_of_column(self, j: int) -> int:
        return int(self.column_labels[j])

    def gram(self) -> np.ndarray:
        with self._lock:
            if self._gram is None:
                self._gram = self.H.T @ self.H
            return self._gram

    def _factor(self, rho: float):
        """Cholesky factor of (H^T H + rho*I), cached per rho.

        At rho == 0 a failed factorization falls back once to a jitter of
        1e-10 * trace(G)/l, mirroring the standalone ridge primitive.
        """
        with self._lock:
            if self._gram is None:
                self._gram = self.H.T @ self.H
            cached = self._factors.get(rho)
            if cached is not None:
                return cached
            G = self._gram
            ell = G.shape[0]
            try:
                cf = cho_factor(G + rho * np.eye(ell), lower=True)
            except LinAlgError:
                jitter = 1e-10 * np.trace(G) / ell
                try:
                    cf = cho_factor(G + (rho + jitter) * np.eye(ell), lower=True)
                except LinAlgError as exc:
                    cond = float(np.linalg.cond(G))
                    raise NumericalError(
                        f"Gram matrix not positive definite at rho={rho} "
                        f"(estimated condition number {cond:.3e})"
                    ) from exc
            self._factors[rho] = cf
            return cf

    def solve_regularized(self, g: np.ndarray, rho: float) -> np.ndarray:
        """Solve (H^T H + rho*I) x = H^T g using the cached factorization."""
        return cho_solve(self._factor(rho), self.H.T @ g)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """F(x) = sum_i x_i A_i as a matrix."""
        return unvectorize(self.H @ x, self.atom_dims)


def assemble_system(dictionary: TrainingDictionary) -> LinearSystem:
    """Stack the dictionary atoms column-wise into the design matrix H."""
    atoms = dictionary.atoms
    ell, m, n = atoms.shape
    # (l, n, m) C-order rows == column-major stackings of the (m, n) atoms.
    H = atoms.transpose(0, 2, 1).reshape(ell, m * n).T.copy()
    return LinearSystem(H=H, atom_dims=(m, n), column_labels=dictionary.labels.copy())


def compute_g(E: np.ndarray, Y: np.ndarray, Z: np.ndarray, mu: float) -> np.ndarray:
    """Right-hand-side vector of the coefficient subproblem:
    vectorize(E + Y - Z/mu)."""
    return vectorize(E + Y - Z / mu)


def update_x_l2(
    sys: LinearSystem, state: SolverState, Y: np.ndarray, cfg: SolverConfig
) -> np.ndarray:
    """Exact coefficient update in l2 mode: the ridge solution
    (H^T H + (eta/mu) I)^-1 H^T g."""
    g = compute_g(state.E, Y, state.Z, cfg.mu)
    return sys.solve_regularized(g, cfg.eta / cfg.mu)


def update_x_l1(
    sys: LinearSystem, state: SolverState, Y: np.ndarray, cfg: SolverConfig
) -> np.ndarray:
    """Coefficient update in l1 mode: soft-threshold the plain least-squares
    solution at eta/(2*mu).

    The least-squares intermediate is stored in ``state.alpha``. Note this
    thresholds the normal-equation solution directly; it is the exact
    proximal step only when H^T H is a multiple of the identity.
    """
    g = compute_g(state.E, Y, state.Z, cfg.mu)
    alpha = sys.solve_regularized(g, 0.0)
    state.alpha = alpha
    return soft_threshold(alpha, cfg.eta / (2.0 * cfg.mu))


def update_E(
    sys: LinearSystem,
    x: np.ndarray,
    Y: np.ndarray,
    Z: np.ndarray,
    cfg: SolverConfig,
    Fx: np.ndarray | None = None,
) -> np.ndarray:
    """Exact error update: singular value thresholding of
    (mu/(mu+2)) * (F(x) - Y + Z/mu) at threshold lam/(mu+2).

    ``Fx`` may pass a precomputed reconstruction to avoid recomputing it.
    """
    if Fx is None:
        Fx = sys.reconstruct(x)
    M = (cfg.mu / (cfg.mu + 2.0)) * (Fx - Y + Z / cfg.mu)
    return svt(M, cfg.lam / (cfg.mu + 2.0))


def update_Z(
    Z: np.ndarray,
    x: np.ndarray,
    E: np.ndarray,
    Y: np.ndarray,
    sys: LinearSystem,
    mu: float,
    Fx: np.ndarray | None = None,
) -> np.ndarray:
    """Dual ascent step on the multiplier: Z + mu*(F(x) - E - Y)."""
    if Fx is None:
        Fx = sys.reconstruct(x)
    return Z + mu * (Fx - E - Y)


def objective(sys: LinearSystem, x: np.ndarray, E: np.ndarray, cfg: SolverConfig) -> float:
    """Model objective at (x, E); the coefficient penalty follows the mode."""
    if cfg.mode == "l1":
        penalty = 0.5 * cfg.eta * float(np.abs(x).sum())
    else:
        penalty = 0.5 * cfg.eta * float(x @ x)
    return frobenius_norm(E) ** 2 + cfg.lam * nuclear_norm(E) + penalty


def solve(
    dictionary: TrainingDictionary,
    Y: np.ndarray,
    cfg: SolverConfig,
    system: LinearSystem | None = None,
) -> SolveResult:
    """Run the full ADMM loop from the zero initialization.

    Stops as soon as, after the dual update, either the constraint residual
    ||F(x) - E - Y||_F or the iterate change max(||dx||_2, ||dE||_F) falls
    to epsilon or below; hitting max_iters first reports converged=False
    with the last iterates. ``system`` may pass a pre-assembled (shared)
    design matrix for the dictionary.

    Raises
    ------
    NumericalError
        Non-finite iterates or a constraint residual blowing up past 1e6
        times its initial value.
    """
    sys = assemble_system(dictionary) if system is None else system
    Y = check_image_matrix(Y, "test image")
    if Y.shape != sys.atom_dims:
        raise ConfigError(f"test image shape {Y.shape} does not match atoms {sys.atom_dims}")

    state = SolverState(
        x=np.zeros(sys.size),
        E=np.zeros(sys.atom_dims),
        Z=np.zeros(sys.atom_dims),
    )
    update_x = update_x_l1 if cfg.mode == "l1" else update_x_l2
    initial_residual = frobenius_norm(Y)
    converged = False
    residual = initial_residual

    for k in range(1, cfg.max_iters + 1):
        x_new = update_x(sys, state, Y, cfg)
        Fx = sys.reconstruct(x_new)
        E_new = update_E(sys, x_new, Y, state.Z, cfg, Fx=Fx)
        Z_new = update_Z(state.Z, x_new, E_new, Y, sys, cfg.mu, Fx=Fx)

        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(E_new))):
            raise NumericalError(f"non-finite iterate at iteration {k}")
        residual = frobenius_norm(Fx - E_new - Y)
        if initial_residual > 0 and residual > _BLOWUP_FACTOR * initial_residual:
            raise NumericalError(
                f"diverged at iteration {k}: constraint residual {residual:.3e} "
                f"exceeds {_BLOWUP_FACTOR:.0e} x initial {initial_residual:.3e}"
            )
        delta = max(
            float(np.linalg.norm(x_new - state.x)), frobenius_norm(E_new - state.E)
        )
        state.x, state.E, state.Z, state.iteration = x_new, E_new, Z_new, k
        if residual <= cfg.epsilon or delta <= cfg.epsilon:
            converged = True
            break

    return SolveResult(
        x=state.x,
        E=state.E,
        iterations=state.iteration,
        converged=converged,
        constraint_residual=residual,
        objective=objective(sys, state.x, state.E, cfg),
    )
