"""
Low-rank factors ``A`` with ``A A^T ~ C0``.

Three generators are provided:

* :func:`anomaly_factor` -- the centred, scaled ensemble of Gaussian draws
  ``U_j ~ N(0, C0)`` (standard EKI).
* :func:`svd_factor` -- the truncated eigendecomposition, optimal in the
  spectral norm for every rank.
* :func:`nystroem_factor` -- a Gaussian range sketch of ``C0`` followed by
  the Nystrom reconstruction ``C0 Q (Q^T C0 Q)^{-1/2}``.

All Gaussian draws go through :class:`GaussianSampler`, which is numpy's
PCG64 bit generator with its ziggurat normal sampler.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .operators import SpdOperator, inv_sqrt_psd, reduced_qr, DEFAULT_CLAMP_TOL

BACKENDS = ("anomaly", "nystroem", "svd")
STOCHASTIC_BACKENDS = ("anomaly", "nystroem")


class GaussianSampler:
    """Seeded standard-normal stream (PCG64 + ziggurat).

    ``spawn(key)`` gives an independent child stream that depends only on
    the parent seed and the key, never on how much of the parent stream has
    been consumed.
    """

    def __init__(self, seed: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def spawn(self, key: int) -> "GaussianSampler":
        return GaussianSampler(self.seed, self.key + (key,))

    def __repr__(self):
        return f"GaussianSampler(seed={self.seed}, key={self.key})"


@dataclass
class LowRankFactor:
    columns: np.ndarray
    method: str = ""
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=float)
        if self.columns.ndim != 2:
            raise ValueError("factor columns must be a 2-D array")

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def J(self) -> int:
        return self.columns.shape[1]

    def covariance(self) -> np.ndarray:
        """Dense ``A A^T`` (test scale only)."""
        return self.columns @ self.columns.T


def _cap(J: int, n: int, notes: list) -> int:
    if J < 1:
        raise ValueError("J must be positive")
    if J > n:
        msg = f"requested J={J} exceeds dimension n={n}; capped to {n}"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return n
    return J


def anomaly(ensemble) -> np.ndarray:
    """Ensemble anomaly of the members stored as columns of ``ensemble``.

    Columns are ``(U_j - mean) / sqrt(J)`` with the arithmetic mean, so
    that ``E[A A^T] = (J - 1) / J * Cov(U)``.
    """
    U = np.asarray(ensemble, dtype=float)
    J = U.shape[1]
    return (U - U.mean(axis=1, keepdims=True)) / np.sqrt(J)


def anomaly_factor(c0: SpdOperator, J: int, rng: GaussianSampler) -> LowRankFactor:
    """Standard-EKI factor from ``J`` Gaussian members ``U_j = C0^{1/2} z_j``.

    For ``J > n`` all members are drawn and the ``n x J`` anomaly is
    compressed to ``n`` columns without changing ``A A^T``.
    """
    if J < 2:
        raise ValueError("anomaly factor needs J >= 2")
    if not c0.has_sqrt:
        raise ValueError("anomaly factor needs C0 with apply_sqrt")
    Z = rng.standard_normal((c0.dim, J))
    A = anomaly(c0.apply_sqrt(Z))
    notes = []
    if J > c0.dim:
        # keep all J members but store an n x n factor with the same A A^T
        _, R = np.linalg.qr(A.T, mode="reduced")
        A = R.T
        notes.append(f"{J} members compressed to an n={c0.dim} column factor")
    return LowRankFactor(A, "anomaly", notes)


def svd_factor(c0, J: int) -> LowRankFactor:
    """Truncated eigendecomposition ``V_J diag(sqrt(lambda_1..J))``."""
    if not isinstance(c0, SpdOperator):
        c0 = SpdOperator.from_dense(c0)
    notes = []
    J = _cap(J, c0.dim, notes)
    lam, V = c0.eigh()
    lam = np.clip(lam[:J], 0.0, None)
    return LowRankFactor(V[:, :J] * np.sqrt(lam), "svd", notes)


def nystroem_factor(c0: SpdOperator, J: int, rng: GaussianSampler,
                    clamp_tol: float = DEFAULT_CLAMP_TOL) -> LowRankFactor:
    """Nystrom factor with a Gaussian projection sketch, no oversampling."""
    notes = []
    J = _cap(J, c0.dim, notes)
    W = rng.standard_normal((c0.dim, J))
    Q, _ = reduced_qr(c0.apply(W))
    C0Q = c0.apply(Q)
    G = Q.T @ C0Q
    G = 0.5 * (G + G.T)
    return LowRankFactor(C0Q @ inv_sqrt_psd(G, clamp_tol), "nystroem", notes)


def make_factor(backend: str, c0: SpdOperator, J: int, rng: GaussianSampler) -> LowRankFactor:
    if backend == "anomaly":
        return anomaly_factor(c0, J, rng)
    if backend == "nystroem":
        return nystroem_factor(c0, J, rng)
    if backend == "svd":
        return svd_factor(c0, J)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def approx_error(factor, c0) -> float:
    """Spectral norm ``||A A^T - C0||_2`` computed densely."""
    A = factor.columns if isinstance(factor, LowRankFactor) else np.asarray(factor, float)
    C = c0.to_dense() if isinstance(c0, SpdOperator) else np.asarray(c0, float)
    if A.shape[0] != C.shape[0] or C.shape[0] != C.shape[1]:
        raise ValueError(f"dimension mismatch: factor {A.shape}, C0 {C.shape}")
    D = A @ A.T - C
    D = 0.5 * (D + D.T)
    ev = np.linalg.eigvalsh(D)
    return float(max(abs(ev[0]), abs(ev[-1])))


def projection_error(Q, c0) -> float:
    """``||Q Q^T C0 - C0||_2``; bounds the Nystrom error from above."""
    C = c0.to_dense() if isinstance(c0, SpdOperator) else np.asarray(c0, float)
    return float(np.linalg.norm(Q @ (Q.T @ C) - C, 2))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
