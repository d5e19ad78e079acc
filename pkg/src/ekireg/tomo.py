"""
Desk-scale parallel-beam tomography test bench.

Image convention: a ``d x d`` image covers ``[-1, 1]^2`` with row 0 at the
top (``y = 1``); it is flattened row-major, so pixel ``i`` sits in column
``i % d`` and row ``i // d``.

The Radon operator is the exact ray/pixel intersection-length matrix
(Siddon-style traversal) of the piecewise-constant image.  Its adjoint is
the transpose of that matrix, not a discretized back-projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse
from scipy.spatial.distance import cdist

from .lowrank import GaussianSampler
from .operators import LinearMap, SpdOperator, DEFAULT_CLAMP_TOL

# Modified Shepp-Logan (Toft): intensity, semi-axes a, b, centre x, y, angle [deg]
SHEPP_LOGAN_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)

# n_angles * n_detectors ~ M_OVER_N * d^2
M_OVER_N = 1.42


def pixel_centers(d: int):
    """Coordinates ``(X, Y)`` of pixel centres, each of shape ``(d, d)``."""
    c = -1.0 + (2.0 * np.arange(d) + 1.0) / d
    return np.meshgrid(c, -c)


def ellipse_sum(x, y, ellipses=SHEPP_LOGAN_ELLIPSES):
    """Sum of intensities of all ellipses containing the points ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for A, a, b, x0, y0, phi in ellipses:
        t = math.radians(phi)
        dx, dy = x - x0, y - y0
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        out += A * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
    return out


def shepp_logan(d: int) -> np.ndarray:
    """Modified Shepp-Logan phantom sampled at pixel centres, values in [0, 1]."""
    if d < 8:
        raise ValueError("phantom needs d >= 8")
    X, Y = pixel_centers(d)
    return np.clip(ellipse_sum(X, Y), 0.0, 1.0)


def disk_image(d: int, radius: float = 0.5, value: float = 1.0) -> np.ndarray:
    X, Y = pixel_centers(d)
    return value * (X ** 2 + Y ** 2 <= radius ** 2)


@dataclass(frozen=True)
class RadonGeometry:
    """Parallel-beam geometry over ``[-1, 1]^2``.

    Detector bins have the pixel width ``2/d`` and are centred on the
    origin; angles are ``pi * a / n_angles`` for ``a = 0..n_angles-1``.
    """
    d: int
    n_angles: Optional[int] = None
    n_detectors: Optional[int] = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n_detectors is None:
            # same parity as d keeps rays off the pixel boundaries
            nd = math.ceil(math.sqrt(2.0) * self.d)
            if (nd - self.d) % 2:
                nd += 1
            object.__setattr__(self, "n_detectors", nd)
        if self.n_angles is None:
            na = max(1, round(M_OVER_N * self.d ** 2 / self.n_detectors))
            object.__setattr__(self, "n_angles", na)
        if self.n_angles < 1 or self.n_detectors < 1:
            raise ValueError("n_angles and n_detectors must be positive")

    @property
    def n(self) -> int:
        return self.d * self.d

    @property
    def m(self) -> int:
        return self.n_angles * self.n_detectors

    @property
    def angles(self) -> np.ndarray:
        return np.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def offsets(self) -> np.ndarray:
        h = 2.0 / self.d
        return (np.arange(self.n_detectors) - 0.5 * (self.n_detectors - 1)) * h


def _trace_ray(s, c, sn, d, grid):
    """Pixel indices and intersection lengths of one ray.

    The ray is ``p(t) = s (c, sn) + t (-sn, c)``.
    """
    eps = 1e-12
    ts = []
    if abs(sn) > eps:
        ts.append((grid - s * c) / (-sn))
    if abs(c) > eps:
        ts.append((grid - s * sn) / c)
    if not ts:
        return None
    t = np.unique(np.concatenate(ts))
    px = s * c - t * sn
    py = s * sn + t * c
    inside = (np.abs(px) <= 1 + eps) & (np.abs(py) <= 1 + eps)
    t = t[inside]
    if t.size < 2:
        return None
    lengths = np.diff(t)
    tm = 0.5 * (t[1:] + t[:-1])
    mx = s * c - tm * sn
    my = s * sn + tm * c
    keep = (lengths > eps) & (np.abs(mx) < 1) & (np.abs(my) < 1)
    h = 2.0 / d
    col = np.clip(np.floor((mx[keep] + 1.0) / h).astype(int), 0, d - 1)
    row = np.clip(np.floor((1.0 - my[keep]) / h).astype(int), 0, d - 1)
    return row * d + col, lengths[keep]


def radon_matrix(geom: RadonGeometry) -> scipy.sparse.csr_matrix:
    """Sparse ``m x n`` matrix of ray/pixel intersection lengths.

    Row ``a * n_detectors + k`` is the ray at angle ``a`` and detector ``k``.
    """
    d = geom.d
    grid = np.linspace(-1.0, 1.0, d + 1)
    rows, cols, vals = [], [], []
    offsets = geom.offsets
    for a, theta in enumerate(geom.angles):
        c, sn = math.cos(theta), math.sin(theta)
        for k, s in enumerate(offsets):
            hit = _trace_ray(s, c, sn, d, grid)
            if hit is None:
                continue
            idx, ln = hit
            rows.append(np.full(idx.size, a * geom.n_detectors + k))
            cols.append(idx)
            vals.append(ln)
    if rows:
        rows, cols, vals = (np.concatenate(v) for v in (rows, cols, vals))
    M = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(geom.m, geom.n))
    return M.tocsr()


def radon_operator(geom: RadonGeometry) -> LinearMap:
    """Forward projector with its exact transpose as adjoint."""
    op = LinearMap.from_matrix(radon_matrix(geom))
    op.geometry = geom
    return op


def ou_points(d: int) -> np.ndarray:
    """Normalized pixel positions ``q_i = ((i mod d), floor(i / d)) / (d - 1)``."""
    i = np.arange(d * d)
    return np.column_stack([(i % d), (i // d)]) / (d - 1)


def ou_kernel(P, Q, h: float) -> np.ndarray:
    return np.exp(-cdist(P, Q) / h ** 2)


def ou_covariance(d: int, h: float, dense: bool = True,
                  clamp_tol: float = DEFAULT_CLAMP_TOL, block: int = 1024) -> SpdOperator:
    """Ornstein-Uhlenbeck prior ``(C0)_ij = exp(-||q_i - q_j|| / h**2)``.

    Note the kernel divides the distance by ``h**2``: the correlation length
    is ``h**2``, so ``h = 0.01`` makes ``C0`` numerically the identity on any
    grid coarser than ~10^4 pixels per side.

    With ``dense=True`` the matrix is formed and eigendecomposed once,
    giving ``apply_sqrt`` / ``apply_inv_sqrt``.  Otherwise rows are
    generated on demand in blocks and only ``apply`` is available.
    """
    if d < 2 or h <= 0:
        raise ValueError("need d >= 2 and h > 0")
    q = ou_points(d)
    if dense:
        C = ou_kernel(q, q, h)
        C = 0.5 * (C + C.T)
        op = SpdOperator.from_dense(C, clamp_tol)
    else:
        n = d * d

        def apply(v):
            v = np.asarray(v, dtype=float)
            out = np.empty_like(v)
            for s in range(0, n, block):
                out[s:s + block] = ou_kernel(q[s:s + block], q, h) @ v
            return out
        op = SpdOperator(n, apply)
    op.grid = d
    op.h = h
    return op


class NoisyData(NamedTuple):
    y_hat: np.ndarray
    delta: float
    scale: float


def make_noisy_data(y, snr: float, rng: GaussianSampler, rescale: bool = True) -> NoisyData:
    """Add white noise at an exact signal-to-noise ratio.

    The noise is ``xi = ||y|| / (snr ||xi_s||) xi_s`` with ``xi_s`` standard
    normal.  With ``rescale`` the data are divided by ``||xi||`` so that the
    noise level is exactly 1; ``scale = 1 / ||xi||`` must then also be
    applied to the forward operator.
    """
    y = np.asarray(y, dtype=float)
    ny = np.linalg.norm(y)
    if ny == 0:
        raise ValueError("y must be nonzero")
    if snr <= 0:
        raise ValueError("snr must be positive")
    xi_s = rng.standard_normal(y.shape)
    while np.linalg.norm(xi_s) == 0:
        xi_s = rng.standard_normal(y.shape)
    xi = ny / (snr * np.linalg.norm(xi_s)) * xi_s
    y_hat = y + xi
    nxi = np.linalg.norm(xi)
    if not rescale:
        return NoisyData(y_hat, float(nxi), 1.0)
    return NoisyData(y_hat / nxi, 1.0, float(1.0 / nxi))


def metrics(x, x_star, x_tik=None):
    """``(e_rel, e_app)``, both normalized by ``||x_star||``; ``e_app`` may be None."""
    ns = np.linalg.norm(x_star)
    if ns == 0:
        raise ValueError("x_star must be nonzero")
    e_rel = float(np.linalg.norm(np.asarray(x) - x_star) / ns)
    e_app = None if x_tik is None else float(np.linalg.norm(np.asarray(x) - x_tik) / ns)
    return e_rel, e_app


def tomography_problem(d: int = 32, snr: float = 10.0, h: float = 0.25,
                       seed: int = 0, geometry: Optional[RadonGeometry] = None,
                       prior: Optional[SpdOperator] = None):
    """Assemble the Radon / Shepp-Logan / OU inverse problem.

    The forward operator and data are rescaled so that ``delta = 1``.
    ``R`` is the identity and ``x0 = 0``.
    """
    from .solvers import InverseProblem

    geom = geometry or RadonGeometry(d)
    L = radon_operator(geom)
    x_star = shepp_logan(d).ravel()
    y = L.apply(x_star)
    noisy = make_noisy_data(y, snr, GaussianSampler(seed))
    Ls = LinearMap.from_matrix(L.matrix * noisy.scale)
    Ls.geometry = geom
    C0 = prior if prior is not None else ou_covariance(d, h)
    return InverseProblem(Ls, SpdOperator.identity(geom.m), C0, np.zeros(geom.n),
                          noisy.y_hat, noisy.delta, x_true=x_star)
