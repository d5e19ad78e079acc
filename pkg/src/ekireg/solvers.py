"""
Regularized inversion engines for ``y = L x`` with noisy data ``y_hat``.

* :func:`tikhonov_solve` -- the exact Tikhonov-regularized solution.
* :func:`direct_eki` -- one-shot EKI update at parameter ``alpha`` for a
  given low-rank factor.
* :func:`eki_step_sqrt` / :func:`eki_step_cov` -- one deterministic EKI
  iteration in square-root and covariance form.
* :func:`stochastic_eki_run` -- EKI with perturbed observations.

``k`` square-root steps from ``(x0, A)`` coincide with
``direct_eki(problem, A, alpha=1/k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .lowrank import GaussianSampler, LowRankFactor, anomaly
from .operators import LinearMap, SpdOperator, inv_sqrt_psd

SOLVE_TOL = 1e-10


@dataclass
class InverseProblem:
    """Linear inverse problem with weights and prior.

    ``forward`` is ``L``, ``noise_weight`` is ``R`` (must expose
    ``apply_inv_sqrt``), ``prior_cov`` is ``C0``.  ``delta`` bounds
    ``||R^{-1/2}(y_hat - y)||``.  ``x_true`` is optional ground truth for
    synthetic problems.
    """
    forward: LinearMap
    noise_weight: SpdOperator
    prior_cov: SpdOperator
    x0: np.ndarray
    y_hat: np.ndarray
    delta: float = 0.0
    rl_bound: Optional[float] = None
    x_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.y_hat = np.asarray(self.y_hat, dtype=float)
        L = self.forward
        if L.domain_dim != self.x0.size or L.range_dim != self.y_hat.size:
            raise ValueError(
                f"inconsistent dimensions: L is {L.range_dim}x{L.domain_dim}, "
                f"x0 has {self.x0.size}, y_hat has {self.y_hat.size}")
        if self.prior_cov.dim != self.x0.size:
            raise ValueError("prior covariance dimension does not match x0")
        if self.noise_weight.dim != self.y_hat.size:
            raise ValueError("noise weight dimension does not match y_hat")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not self.noise_weight.has_inv_sqrt:
            raise ValueError("noise weight must expose apply_inv_sqrt")

    @property
    def n(self) -> int:
        return self.forward.domain_dim

    @property
    def m(self) -> int:
        return self.forward.range_dim

    def whiten(self, y) -> np.ndarray:
        """``R^{-1/2} y``."""
        return self.noise_weight.apply_inv_sqrt(y)

    def whitened_forward(self, X) -> np.ndarray:
        """``R^{-1/2} L X``, applied column-wise for blocks."""
        return self.whiten(self.forward.apply(X))

    def residual(self, x) -> float:
        """``||y_hat - L x||_R``."""
        return float(np.linalg.norm(self.whiten(self.y_hat - self.forward.apply(x))))

    def objective(self, x, alpha: float) -> float:
        """Tikhonov functional ``||y_hat - Lx||_R^2 + alpha ||x - x0||_C0^2``."""
        if not self.prior_cov.has_inv_sqrt:
            raise ValueError("objective needs C0 with apply_inv_sqrt")
        w = self.prior_cov.apply_inv_sqrt(x - self.x0)
        return self.residual(x) ** 2 + alpha * float(w @ w)


@dataclass
class EkiState:
    k: int
    x_hat: np.ndarray
    factor: LowRankFactor


def _spd_solve(S, rhs, tol=SOLVE_TOL):
    """Cholesky solve with one step of iterative refinement."""
    S = 0.5 * (S + S.T)
    try:
        cf = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"system is not positive definite: {exc}") from exc
    x = scipy.linalg.cho_solve(cf, rhs)
    x = x + scipy.linalg.cho_solve(cf, rhs - S @ x)
    rel = np.linalg.norm(S @ x - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if rel > tol:
        raise np.linalg.LinAlgError(
            f"inner solve residual {rel:.2e} exceeds tolerance {tol:.0e}")
    return x


def _dense_R(problem: InverseProblem) -> np.ndarray:
    R = problem.noise_weight
    if hasattr(R, "diag"):
        return np.diag(R.diag)
    return R.to_dense()


def tikhonov_solve(problem: InverseProblem, alpha: float, space: str = "auto") -> np.ndarray:
    """Tikhonov-regularized solution at parameter ``alpha``.

    ``space="data"`` solves the ``m x m`` system
    ``(L C0 L^T + alpha R) z = y_hat - L x0``; ``space="param"`` solves the
    ``n x n`` system ``(B^T B + alpha I) w = B^T R^{-1/2}(y_hat - L x0)``
    with ``B = R^{-1/2} L C0^{1/2}``.  ``"auto"`` picks the smaller one
    (parameter space needs ``C0.apply_sqrt``).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n, m = problem.n, problem.m
    C0 = problem.prior_cov
    if space == "auto":
        space = "param" if (n <= m and C0.has_sqrt) else "data"
    r = problem.y_hat - problem.forward.apply(problem.x0)
    if space == "param":
        S0 = C0.apply_sqrt(np.eye(n))
        B = problem.whitened_forward(S0)
        w = _spd_solve(B.T @ B + alpha * np.eye(n), B.T @ problem.whiten(r))
        return problem.x0 + S0 @ w
    if space == "data":
        CLt = C0.apply(problem.forward.apply_adjoint(np.eye(m)))
        S = problem.forward.apply(CLt) + alpha * _dense_R(problem)
        return problem.x0 + CLt @ _spd_solve(S, r)
    raise ValueError(f"unknown space {space!r}")


def direct_eki(problem: InverseProblem, factor, alpha: float) -> np.ndarray:
    """Direct EKI ``x0 + A (B^T B + alpha I)^{-1} B^T R^{-1/2}(y_hat - L x0)``.

    ``B = R^{-1/2} L A`` costs one forward application per factor column.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = factor.columns if isinstance(factor, LowRankFactor) else np.asarray(factor, float)
    if A.shape[0] != problem.n:
        raise ValueError(f"factor has {A.shape[0]} rows, problem has n={problem.n}")
    B = problem.whitened_forward(A)
    rhs = B.T @ problem.whiten(problem.y_hat - problem.forward.apply(problem.x0))
    c = _spd_solve(B.T @ B + alpha * np.eye(A.shape[1]), rhs)
    return problem.x0 + A @ c


def eki_step_sqrt(problem: InverseProblem, state: EkiState) -> EkiState:
    """One deterministic EKI step in square-root form.

    ``x <- x + A G^{-1} B^T R^{-1/2}(y_hat - L x)`` and ``A <- A G^{-1/2}``
    with ``B = R^{-1/2} L A`` and ``G = B^T B + I``.
    """
    A = state.factor.columns
    if A.shape[0] != problem.n or state.x_hat.size != problem.n:
        raise ValueError("state is inconsistent with problem dimensions")
    B = problem.whitened_forward(A)
    G = B.T @ B + np.eye(A.shape[1])
    rhs = B.T @ problem.whiten(problem.y_hat - problem.forward.apply(state.x_hat))
    x_next = state.x_hat + A @ _spd_solve(G, rhs)
    A_next = A @ inv_sqrt_psd(G)
    return EkiState(state.k + 1, x_next, replace(state.factor, columns=A_next))


def eki_step_cov(problem: InverseProblem, x, cov_apply: Callable):
    """One deterministic EKI step in covariance form.

    Parameters
    ----------
    x : ndarray, shape (n,)
    cov_apply : callable
        ``V -> C_k V`` for ``V`` of shape ``(n,)`` or ``(n, k)``.

    Returns
    -------
    x_next : ndarray
    cov_next : callable
        ``V -> C_k V - C_k L^T (L C_k L^T + R)^{-1} L C_k V``.
    """
    L = problem.forward
    CLt = np.asarray(cov_apply(L.apply_adjoint(np.eye(problem.m))), dtype=float)
    S = L.apply(CLt) + _dense_R(problem)
    S = 0.5 * (S + S.T)
    try:
        cf = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance-form system failed: {exc}") from exc
    x = np.asarray(x, dtype=float)
    x_next = x + CLt @ scipy.linalg.cho_solve(cf, problem.y_hat - L.apply(x))

    def cov_next(V):
        CV = np.asarray(cov_apply(V), dtype=float)
        return CV - CLt @ scipy.linalg.cho_solve(cf, L.apply(CV))

    return x_next, cov_next


def stochastic_eki_run(problem: InverseProblem, ensemble_size: int, steps: int,
                       rng: GaussianSampler, initial=None):
    """EKI with perturbed observations.

    Each step draws ``xi_j ~ N(0, R)`` and updates every member with the
    Kalman gain built from the current sample covariance (``1/J``
    normalization).  The initial ensemble is ``N(x0, C0)`` unless
    ``initial`` (shape ``(n, J)``) is given.

    Returns
    -------
    ensemble : ndarray, shape (n, J)
    mean : ndarray, shape (n,)
    """
    J = int(ensemble_size)
    if J < 2:
        raise ValueError("stochastic EKI needs ensemble_size >= 2")
    R = problem.noise_weight
    if not R.has_sqrt:
        raise ValueError("noise weight must expose apply_sqrt for perturbations")
    L = problem.forward
    if initial is None:
        X = problem.x0[:, None] + problem.prior_cov.apply_sqrt(
            rng.standard_normal((problem.n, J)))
    else:
        X = np.array(initial, dtype=float)
        if X.shape != (problem.n, J):
            raise ValueError(f"initial ensemble must have shape {(problem.n, J)}")
    Rd = _dense_R(problem)
    for _ in range(steps):
        A = anomaly(X)                      # C = A A^T
        LA = L.apply(A)
        S = LA @ LA.T + Rd
        xi = R.apply_sqrt(rng.standard_normal((problem.m, J)))
        innov = problem.y_hat[:, None] + xi - L.apply(X)
        X = X + A @ (LA.T @ _spd_solve(S, innov, tol=1e-8))
    return X, X.mean(axis=1)


def estimate_rl_bound(problem: InverseProblem, iters: int = 50, rtol: float = 1e-6,
                      seed: int = 0) -> float:
    """Power-iteration estimate of ``||R^{-1/2} L||``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(problem.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = problem.forward.apply_adjoint(
            problem.whiten(problem.whiten(problem.forward.apply(v))))
        new = float(np.sqrt(np.linalg.norm(w)))
        if new == 0.0:
            return 0.0
        v = w / np.linalg.norm(w)
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return est
