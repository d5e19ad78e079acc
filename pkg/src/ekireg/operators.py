"""
Matrix-free linear maps, SPD operators and small dense kernels.

Everything downstream works with finite-dimensional real coordinate
spaces and the Euclidean inner product.  A :class:`LinearMap` wraps a
forward procedure and an optional adjoint; an :class:`SpdOperator` wraps a
symmetric positive (semi)definite operator together with optional square
root and inverse square root applications.

Both accept either a single vector of shape ``(n,)`` or a block of column
vectors of shape ``(n, k)``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse

DEFAULT_CLAMP_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class AdjointUnavailableError(ValueError):
    pass


class NotPSDError(np.linalg.LinAlgError):
    pass


def _columnwise(fn: Callable, x: np.ndarray, out_dim: int) -> np.ndarray:
    if x.ndim == 1:
        return np.asarray(fn(x), dtype=float)
    out = np.empty((out_dim, x.shape[1]))
    for j in range(x.shape[1]):
        out[:, j] = fn(x[:, j])
    return out


class LinearMap:
    """A linear map ``R^domain_dim -> R^range_dim``.

    Parameters
    ----------
    forward : callable
        ``x -> Lx``.
    domain_dim, range_dim : int
    adjoint : callable, optional
        ``y -> L^T y``.
    vectorized : bool
        If True, ``forward``/``adjoint`` accept ``(n, k)`` blocks directly.
        Otherwise blocks are applied column by column.
    """

    def __init__(self, forward: Callable, domain_dim: int, range_dim: int,
                 adjoint: Optional[Callable] = None, vectorized: bool = False):
        if domain_dim < 1 or range_dim < 1:
            raise ValueError("dimensions must be positive")
        self.forward = forward
        self.adjoint = adjoint
        self.domain_dim = int(domain_dim)
        self.range_dim = int(range_dim)
        self.vectorized = vectorized

    @classmethod
    def from_matrix(cls, M) -> "LinearMap":
        """Wrap a dense array or a scipy sparse matrix."""
        if not scipy.sparse.issparse(M):
            M = np.asarray(M, dtype=float)
        Mt = M.T
        lm = cls(lambda x: M @ x, M.shape[1], M.shape[0],
                 adjoint=lambda y: Mt @ y, vectorized=True)
        lm.matrix = M
        return lm

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls(lambda x: np.array(x, dtype=float), n, n,
                   adjoint=lambda y: np.array(y, dtype=float), vectorized=True)

    @classmethod
    def zero(cls, domain_dim: int, range_dim: int) -> "LinearMap":
        def fwd(x):
            return np.zeros((range_dim,) + np.shape(x)[1:])

        def adj(y):
            return np.zeros((domain_dim,) + np.shape(y)[1:])
        return cls(fwd, domain_dim, range_dim, adjoint=adj, vectorized=True)

    @property
    def shape(self):
        return (self.range_dim, self.domain_dim)

    @property
    def has_adjoint(self) -> bool:
        return self.adjoint is not None

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.domain_dim:
            raise ValueError(f"expected leading dimension {self.domain_dim}, got {x.shape[0]}")
        if self.vectorized:
            return np.asarray(self.forward(x), dtype=float)
        return _columnwise(self.forward, x, self.range_dim)

    def apply_adjoint(self, y) -> np.ndarray:
        if self.adjoint is None:
            raise AdjointUnavailableError("adjoint unavailable")
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.range_dim:
            raise ValueError(f"expected leading dimension {self.range_dim}, got {y.shape[0]}")
        if self.vectorized:
            return np.asarray(self.adjoint(y), dtype=float)
        return _columnwise(self.adjoint, y, self.domain_dim)

    __call__ = apply

    @property
    def T(self) -> "LinearMap":
        if self.adjoint is None:
            raise AdjointUnavailableError("adjoint unavailable")
        return LinearMap(self.apply_adjoint, self.range_dim, self.domain_dim,
                         adjoint=self.apply, vectorized=True)

    def __matmul__(self, other):
        if isinstance(other, LinearMap):
            if other.range_dim != self.domain_dim:
                raise ValueError("dimension mismatch in composition")
            adj = None
            if self.has_adjoint and other.has_adjoint:
                def adj(y):
                    return other.apply_adjoint(self.apply_adjoint(y))
            return LinearMap(lambda x: self.apply(other.apply(x)),
                             other.domain_dim, self.range_dim,
                             adjoint=adj, vectorized=True)
        return self.apply(other)

    def scaled(self, c: float) -> "LinearMap":
        """Return the map ``c * L``."""
        adj = None
        if self.has_adjoint:
            def adj(y):
                return c * self.apply_adjoint(y)
        return LinearMap(lambda x: c * self.apply(x), self.domain_dim,
                         self.range_dim, adjoint=adj, vectorized=True)

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.domain_dim))


class SpdOperator:
    """Symmetric positive semidefinite operator on ``R^dim``.

    ``apply_sqrt`` and ``apply_inv_sqrt`` are optional capabilities; the
    inverse square root is understood as the pseudoinverse of the square
    root.  Operators built with :meth:`from_dense` or :meth:`diagonal` carry
    their eigendecomposition, which :meth:`eigh` returns without recomputing.
    """

    def __init__(self, dim: int, apply: Callable,
                 apply_sqrt: Optional[Callable] = None,
                 apply_inv_sqrt: Optional[Callable] = None):
        self.dim = int(dim)
        self._apply = apply
        self._apply_sqrt = apply_sqrt
        self._apply_inv_sqrt = apply_inv_sqrt
        self._eig = None
        self.dense = None

    @classmethod
    def from_dense(cls, M, clamp_tol: float = DEFAULT_CLAMP_TOL) -> "SpdOperator":
        """Build from a dense symmetric PSD matrix.

        Square roots come from one symmetric eigendecomposition; eigenvalues
        below ``clamp_tol * lambda_max`` are set to zero.
        """
        M = np.asarray(M, dtype=float)
        lam, V = sym_eig(M)
        lam = _clamp_spectrum(lam, clamp_tol)
        sq = np.sqrt(lam)
        inv_sq = np.zeros_like(sq)
        nz = sq > 0
        inv_sq[nz] = 1.0 / sq[nz]
        S = (V * sq) @ V.T
        Si = (V * inv_sq) @ V.T
        op = cls(M.shape[0], lambda v: M @ v, lambda v: S @ v, lambda v: Si @ v)
        op._eig = (lam, V)
        op.dense = M
        return op

    @classmethod
    def diagonal(cls, diag) -> "SpdOperator":
        d = np.asarray(diag, dtype=float)
        if np.any(d < 0):
            raise NotPSDError("negative diagonal entry")
        sq = np.sqrt(d)
        inv_sq = np.zeros_like(sq)
        inv_sq[sq > 0] = 1.0 / sq[sq > 0]

        def scale(w):
            return lambda v: w.reshape((-1,) + (1,) * (np.ndim(v) - 1)) * v
        op = cls(d.size, scale(d), scale(sq), scale(inv_sq))
        order = np.argsort(-d, kind="stable")
        op._eig = (d[order], np.eye(d.size)[:, order])
        op.diag = d
        return op

    @classmethod
    def identity(cls, n: int) -> "SpdOperator":
        return cls.diagonal(np.ones(n))

    @property
    def has_sqrt(self) -> bool:
        return self._apply_sqrt is not None

    @property
    def has_inv_sqrt(self) -> bool:
        return self._apply_inv_sqrt is not None

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise ValueError(f"expected leading dimension {self.dim}, got {v.shape[0]}")
        return v

    def apply(self, v) -> np.ndarray:
        return np.asarray(self._apply(self._check(v)), dtype=float)

    __call__ = apply

    def apply_sqrt(self, v) -> np.ndarray:
        if self._apply_sqrt is None:
            raise ValueError("square root unavailable")
        return np.asarray(self._apply_sqrt(self._check(v)), dtype=float)

    def apply_inv_sqrt(self, v) -> np.ndarray:
        if self._apply_inv_sqrt is None:
            raise ValueError("inverse square root unavailable")
        return np.asarray(self._apply_inv_sqrt(self._check(v)), dtype=float)

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        return self.apply(np.eye(self.dim))

    def eigh(self):
        """Eigenvalues (descending) and orthonormal eigenvectors."""
        if self._eig is None:
            lam, V = sym_eig(self.to_dense())
            self._eig = (lam, V)
        return self._eig

    def as_map(self) -> LinearMap:
        return LinearMap(self.apply, self.dim, self.dim, adjoint=self.apply,
                         vectorized=True)

    def inv_sqrt_map(self) -> LinearMap:
        return LinearMap(self.apply_inv_sqrt, self.dim, self.dim,
                         adjoint=self.apply_inv_sqrt, vectorized=True)

    def scaled(self, c: float) -> "SpdOperator":
        """Return ``c * P`` for ``c > 0``."""
        if c <= 0:
            raise ValueError("scale must be positive")
        rc = np.sqrt(c)
        op = SpdOperator(
            self.dim, lambda v: c * self.apply(v),
            (lambda v: rc * self.apply_sqrt(v)) if self.has_sqrt else None,
            (lambda v: self.apply_inv_sqrt(v) / rc) if self.has_inv_sqrt else None)
        if self._eig is not None:
            op._eig = (c * self._eig[0], self._eig[1])
        if self.dense is not None:
            op.dense = c * self.dense
        return op


class WeightedNorm:
    """The norm ``||x||_P = ||P^{-1/2} x||``."""

    def __init__(self, weight: SpdOperator):
        if not weight.has_inv_sqrt:
            raise ValueError("weight must expose apply_inv_sqrt")
        self.weight = weight

    def __call__(self, x) -> float:
        w = self.weight.apply_inv_sqrt(x)
        s = np.max(np.abs(w), initial=0.0)
        # scale first so tiny or huge entries do not under/overflow when squared
        return float(s * np.linalg.norm(w / s)) if s > 0 else 0.0


def adjoint_test(op: LinearMap, trials: int = 10, seed: int = 0) -> float:
    """Largest relative defect ``|<Lx, y> - <x, L^T y>|`` over random pairs."""
    if not op.has_adjoint:
        raise AdjointUnavailableError("adjoint unavailable")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    eps = np.finfo(float).eps
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.domain_dim)
        y = rng.standard_normal(op.range_dim)
        Lx = op.apply(x)
        lhs = Lx @ y
        rhs = x @ op.apply_adjoint(y)
        defect = abs(lhs - rhs) / (np.linalg.norm(Lx) * np.linalg.norm(y) + eps)
        worst = max(worst, defect)
    return worst


def sym_eig(matrix):
    """Symmetric eigendecomposition with eigenvalues in descending order.

    Ties keep the LAPACK output order (stable sort), so equal inputs always
    give bit-identical outputs.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    lam, V = scipy.linalg.eigh(M)
    order = np.argsort(-lam, kind="stable")
    return lam[order], V[:, order]


def _clamp_spectrum(lam, clamp_tol):
    lam_max = max(lam.max(initial=0.0), 0.0)
    if np.any(lam < -clamp_tol * lam_max):
        raise NotPSDError("not PSD: eigenvalue %.3e below clamp" % lam.min())
    lam = lam.copy()
    lam[lam <= clamp_tol * lam_max] = 0.0
    return lam


def inv_sqrt_psd(matrix, clamp_tol: float = DEFAULT_CLAMP_TOL) -> np.ndarray:
    """Pseudoinverse square root of a symmetric PSD matrix.

    Eigenvalues at or below ``clamp_tol * lambda_max`` count as zero.

    Raises
    ------
    NotPSDError
        If an eigenvalue is below ``-clamp_tol * lambda_max``.
    """
    lam, V = sym_eig(matrix)
    lam = _clamp_spectrum(lam, clamp_tol)
    inv = np.zeros_like(lam)
    nz = lam > 0
    inv[nz] = 1.0 / np.sqrt(lam[nz])
    return (V * inv) @ V.T


def reduced_qr(columns):
    """Reduced QR decomposition of a tall ``n x J`` matrix (Householder).

    Signs are fixed so that ``diag(R) >= 0``.  Rank-deficient input gives
    zero diagonal entries in ``R``; ``Q`` keeps orthonormal columns.
    """
    Y = np.asarray(columns, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, J = Y.shape
    if n < J:
        raise ValueError(f"reduced_qr needs n >= J, got n={n}, J={J}")
    Q, R = np.linalg.qr(Y, mode="reduced")
    s = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * s, R * s[:, None]
