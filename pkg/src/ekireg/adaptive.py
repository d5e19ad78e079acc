"""
Adaptive EKI: a geometric regularization schedule coupled to a growing
sample size, with discrepancy-principle stopping.

At iteration ``k`` the driver uses ``alpha_k = b**k * alpha0`` and
``J_k = ceil(b**(-(k - offset)/gamma) * J0)``, draws a fresh factor of rank
``J_k`` from the configured backend and evaluates direct EKI.  It stops at
the first iterate whose residual is at most ``tau * delta``, or as soon as
``J_k`` would exceed the parameter dimension.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .lowrank import BACKENDS, STOCHASTIC_BACKENDS, GaussianSampler, make_factor
from .solvers import InverseProblem, direct_eki, tikhonov_solve

RECORD_HEADER = ("k", "alpha", "J", "residual", "e_rel", "e_app", "projected", "wall_time")

# guards ceil() against b**(-k/gamma) landing a few ulps above an integer
_CEIL_GUARD = 1e-12


@dataclass
class AdaptiveConfig:
    alpha0: float = 1.0
    J0: int = 50
    b: float = 0.8
    gamma: float = 1.0
    tau: float = 1.2
    radius: float = math.inf
    backend: str = "nystroem"
    max_iter: int = 100
    seed: int = 0
    index_offset: int = 0

    def __post_init__(self):
        if not 0 < self.b < 1:
            raise ValueError("b must lie in (0, 1)")
        if self.tau <= 1:
            raise ValueError("tau must be > 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.J0 < 1:
            raise ValueError("J0 must be a positive integer")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")

    @classmethod
    def from_file(cls, path) -> "AdaptiveConfig":
        return cls(**read_config(path, cls))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(value: str, kind):
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value


def read_config(path, cls=AdaptiveConfig, section_keys=None) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Only keys that are fields of ``cls`` are returned (typed accordingly);
    the rest are collected into ``section_keys`` if a dict is supplied.
    """
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in types:
                out[key] = _coerce(value, types[key])
            elif section_keys is not None:
                section_keys[key] = value
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return out


@dataclass
class IterationRecord:
    k: int
    alpha: float
    J: int
    residual: float
    e_rel: Optional[float] = None
    e_app: Optional[float] = None
    projected: bool = False
    wall_time: float = 0.0

    def row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, h)) for h in RECORD_HEADER]


def schedule(config: AdaptiveConfig, k: int):
    """Return ``(alpha_k, J_k)`` for iteration ``k >= 0``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    alpha = config.b ** k * config.alpha0
    growth = config.b ** (-(k - config.index_offset) / config.gamma)
    J = math.ceil(growth * config.J0 * (1 - _CEIL_GUARD))
    return alpha, max(J, 1)


def project_ball(x, x0, r: float):
    """Orthogonal projection onto the closed ball of radius ``r`` about ``x0``."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if r <= 0:
        raise ValueError("radius must be positive")
    d = x - x0
    dist = np.linalg.norm(d)
    if dist <= r:
        return x, False
    return x0 + (r / dist) * d, True


def discrepancy_stop(residual: float, tau: float, delta: float) -> bool:
    return residual <= tau * delta


class AdaptiveRunError(RuntimeError):
    def __init__(self, k, cause):
        super().__init__(f"adaptive EKI failed at iteration k={k}: {cause}")
        self.k = k


@dataclass
class AdaptiveResult:
    solution: np.ndarray
    records: list
    stopped_by: str

    def __iter__(self):
        return iter((self.solution, self.records, self.stopped_by))


def adaptive_run(problem: InverseProblem, config: AdaptiveConfig,
                 x_star=None, tikhonov_reference: bool = False) -> AdaptiveResult:
    """Run adaptive EKI until the discrepancy principle fires.

    Parameters
    ----------
    x_star : ndarray, optional
        Ground truth; enables ``e_rel`` logging (falls back to
        ``problem.x_true``).
    tikhonov_reference : bool
        Also compute the Tikhonov solution at each ``alpha_k`` and log
        ``e_app`` (needs ``x_star``).

    Returns
    -------
    AdaptiveResult
        Unpacks as ``(solution, records, stopped_by)`` where ``stopped_by``
        is ``"discrepancy"``, ``"sample_cap"`` or ``"max_iter"``.
    """
    if x_star is None:
        x_star = problem.x_true
    x_norm = np.linalg.norm(x_star) if x_star is not None else None
    root = GaussianSampler(config.seed)
    stochastic = config.backend in STOCHASTIC_BACKENDS
    records = []
    x = problem.x0.copy()
    for k in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        alpha, J = schedule(config, k)
        if J > problem.n:
            return AdaptiveResult(x, records, "sample_cap")
        try:
            factor = make_factor(config.backend, problem.prior_cov, J, root.spawn(k))
            x = direct_eki(problem, factor, alpha)
        except Exception as exc:
            raise AdaptiveRunError(k, exc) from exc
        projected = False
        if stochastic and math.isfinite(config.radius):
            x, projected = project_ball(x, problem.x0, config.radius)
        res = problem.residual(x)
        e_rel = e_app = None
        if x_star is not None and x_norm > 0:
            e_rel = float(np.linalg.norm(x - x_star) / x_norm)
            if tikhonov_reference:
                e_app = float(np.linalg.norm(x - tikhonov_solve(problem, alpha)) / x_norm)
        records.append(IterationRecord(k, alpha, J, res, e_rel, e_app, projected,
                                       time.perf_counter() - t0))
        if discrepancy_stop(res, config.tau, problem.delta):
            return AdaptiveResult(x, records, "discrepancy")
    return AdaptiveResult(x, records, "max_iter")


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for rec in records:
            w.writerow(rec.row())


def read_records(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            v = dict(zip(header, row))
            out.append(IterationRecord(
                int(v["k"]), float(v["alpha"]), int(v["J"]), float(v["residual"]),
                float(v["e_rel"]) if v["e_rel"] else None,
                float(v["e_app"]) if v["e_app"] else None,
                bool(int(v["projected"])), float(v["wall_time"])))
    return out
