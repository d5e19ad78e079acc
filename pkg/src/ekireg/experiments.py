"""
Experiment runner: test problems, parameter sweeps, CSV logs, manifests
and generated plot scripts.

Sweeps
------
``adaptive``
    adaptive EKI per (backend, seed); one IterationRecord CSV each.
``fixed-alpha-vary-J``
    direct EKI at one ``alpha`` over a grid of sample sizes.
``fixed-J-vary-alpha``
    direct EKI at one sample size over a grid of ``alpha``.
``rate-vs-delta``
    adaptive EKI on a source-condition problem over a grid of noise levels.

Every run writes ``manifest.json`` (spec echo, library versions, seeds
consumed, files written) and a ``plot_<sweep>.py`` script that renders the
CSVs with matplotlib.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .adaptive import (AdaptiveConfig, adaptive_run, read_config, write_records)
from .lowrank import BACKENDS, GaussianSampler, loglog_slope, make_factor
from .operators import LinearMap, SpdOperator
from .solvers import InverseProblem, direct_eki, tikhonov_solve
from .tomo import make_noisy_data, tomography_problem

PROBLEMS = ("radon", "synthetic-diagonal", "dense-random")
SWEEPS = ("adaptive", "fixed-alpha-vary-J", "fixed-J-vary-alpha", "rate-vs-delta")

# desk-scale OU parameter of the Radon bench (see README)
BENCH_H = 0.25

# per-backend (b, gamma) with equal sample-size sequences J_k
MATCHED_SCHEDULES = {
    "anomaly": (math.sqrt(0.8), 0.5),
    "nystroem": (0.8, 1.0),
    "svd": (0.8, 1.0),
}

SWEEP_HEADER = ("backend", "seed", "J", "alpha", "e_app", "e_rel", "residual")
RATE_HEADER = ("backend", "delta", "k", "J", "alpha", "residual", "error", "stopped_by")


class ExperimentSpecError(ValueError):
    """Invalid experiment specification; ``field`` names the culprit."""

    def __init__(self, field_name, msg):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def _floats(v):
    if isinstance(v, str):
        return [float(s) for s in v.replace(";", ",").split(",") if s.strip()]
    return [float(x) for x in v]


def _ints(v):
    if isinstance(v, str):
        return [int(float(s)) for s in v.replace(";", ",").split(",") if s.strip()]
    return [int(x) for x in v]


def _strs(v):
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return list(v)


@dataclass
class ExperimentSpec:
    problem: str = "radon"
    sweep: str = "adaptive"
    backends: list = field(default_factory=lambda: list(BACKENDS))
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs/experiment"
    # problem parameters
    d: int = 32
    snr: float = 10.0
    h: float = BENCH_H
    n: int = 30
    data_seed: int = 0
    # adaptive schedule; b/gamma of None use the per-backend matched schedule
    alpha0: float = 1.0
    J0: int = 50
    b: Optional[float] = None
    gamma: Optional[float] = None
    tau: float = 1.2
    radius: float = math.inf
    index_offset: int = 1
    max_iter: int = 100
    tikhonov_reference: bool = False
    # sweep grids
    alpha: float = 0.03
    J: Optional[int] = None
    alphas: list = field(default_factory=lambda: [10.0 ** (-0.5 * i) for i in range(13)])
    Js: list = field(default_factory=list)
    # rate-vs-delta
    mu: float = 0.5
    deltas: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    timing: bool = False

    def __post_init__(self):
        self.radius = float(self.radius)
        self.backends = _strs(self.backends)
        self.seeds = _ints(self.seeds)
        self.alphas = _floats(self.alphas)
        self.Js = _ints(self.Js)
        self.deltas = _floats(self.deltas)
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ExperimentSpecError("problem", f"must be one of {PROBLEMS}")
        if self.sweep not in SWEEPS:
            raise ExperimentSpecError("sweep", f"must be one of {SWEEPS}")
        if not self.backends:
            raise ExperimentSpecError("backends", "grid is empty")
        for bk in self.backends:
            if bk not in BACKENDS:
                raise ExperimentSpecError("backends", f"unknown backend {bk!r}")
        if not self.seeds:
            raise ExperimentSpecError("seeds", "grid is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ExperimentSpecError("seeds", "seeds must be distinct")
        if self.sweep == "fixed-J-vary-alpha":
            if not self.alphas:
                raise ExperimentSpecError("alphas", "grid is empty")
            if any(a <= 0 for a in self.alphas):
                raise ExperimentSpecError("alphas", "values must be positive")
        if self.sweep == "fixed-alpha-vary-J":
            if not self.Js:
                raise ExperimentSpecError("Js", "grid is empty")
            if any(j < 1 for j in self.Js):
                raise ExperimentSpecError("Js", "values must be positive")
        if self.sweep == "rate-vs-delta":
            if not self.deltas:
                raise ExperimentSpecError("deltas", "grid is empty")
            if not 0 < self.mu <= 0.5:
                raise ExperimentSpecError("mu", "must lie in (0, 1/2]")
        if self.d < 8:
            raise ExperimentSpecError("d", "must be >= 8")
        if self.snr <= 0:
            raise ExperimentSpecError("snr", "must be positive")
        if self.tau <= 1:
            raise ExperimentSpecError("tau", "must be > 1")
        if self.b is not None and not 0 < self.b < 1:
            raise ExperimentSpecError("b", "must lie in (0, 1)")
        if self.gamma is not None and self.gamma <= 0:
            raise ExperimentSpecError("gamma", "must be positive")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        """Read a ``key = value`` file or a ``manifest.json`` from an earlier run."""
        if str(path).endswith(".json"):
            with open(path) as fh:
                data = json.load(fh)
            return cls(**data.get("spec", data))
        raw = {}
        read_config(path, _Empty, section_keys=raw)
        return cls(**_typed(raw))

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["radius"]):
            d["radius"] = "inf"
        return d


@dataclass
class _Empty:
    pass


def _typed(raw: dict) -> dict:
    types = {f.name: f.type for f in fields(ExperimentSpec)}
    out = {}
    for k, v in raw.items():
        if k not in types:
            raise ExperimentSpecError(k, "unknown field")
        t = types[k]
        try:
            if t == "int":
                out[k] = int(v)
            elif t == "float":
                out[k] = float(v)
            elif t == "bool":
                out[k] = v.strip().lower() in ("1", "true", "yes", "on")
            elif t.startswith("Optional[float]"):
                out[k] = None if v.lower() == "none" else float(v)
            elif t.startswith("Optional[int]"):
                out[k] = None if v.lower() == "none" else int(v)
            else:
                out[k] = v
        except ValueError as exc:
            raise ExperimentSpecError(k, f"bad value {v!r}") from exc
    return out


def _diag_map(s) -> LinearMap:
    s = np.asarray(s, dtype=float)

    def f(x):
        return s.reshape((-1,) + (1,) * (np.ndim(x) - 1)) * x
    lm = LinearMap(f, s.size, s.size, adjoint=f, vectorized=True)
    lm.diag = s
    return lm


def synthetic_diagonal_problem(n: int = 30, snr: float = 10.0, seed: int = 0,
                               spectrum_decay: float = 2.0) -> InverseProblem:
    """Diagonal problem with ``C0 = diag(i^-decay)``, ``L = diag(i^-1/2)``, ``R = I``.

    The truth is ``x_i = C0^{1/2} (-1)^i / i`` scaled to unit norm; data are
    noisy at the given SNR and rescaled to ``delta = 1``.
    """
    i = np.arange(1, n + 1, dtype=float)
    lam = i ** -spectrum_decay
    s = i ** -0.5
    x_true = np.sqrt(lam) * (-1.0) ** i / i
    x_true /= np.linalg.norm(x_true)
    noisy = make_noisy_data(s * x_true, snr, GaussianSampler(seed))
    return InverseProblem(_diag_map(s * noisy.scale), SpdOperator.identity(n),
                          SpdOperator.diagonal(lam), np.zeros(n), noisy.y_hat,
                          noisy.delta, x_true=x_true)


def dense_random_problem(n: int = 20, m: int = 24, snr: float = 10.0,
                         seed: int = 0) -> InverseProblem:
    """Dense Gaussian ``L``, ``C0`` with eigenvalues ``i^-2`` in a random basis."""
    rng = np.random.default_rng(seed)
    Lm = rng.standard_normal((m, n)) / np.sqrt(m)
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    C = (Qm * np.arange(1, n + 1, dtype=float) ** -2) @ Qm.T
    C0 = SpdOperator.from_dense(0.5 * (C + C.T))
    x_true = C0.apply_sqrt(rng.standard_normal(n))
    noisy = make_noisy_data(Lm @ x_true, snr, GaussianSampler(seed))
    return InverseProblem(LinearMap.from_matrix(Lm * noisy.scale), SpdOperator.identity(m),
                          C0, np.zeros(n), noisy.y_hat, noisy.delta, x_true=x_true)


def source_condition_problem(mu: float, delta: float, noise_seed: int = 0,
                             n_flat: int = 100, n: int = 400, order: float = 10.0,
                             decades: float = 6.0, rho: float = 1.0) -> InverseProblem:
    """Diagonal problem whose minimum-norm solution satisfies a source condition.

    ``C0`` is the identity on the first ``n_flat`` modes and decays like
    ``(i / n_flat)^-order`` beyond, so the truncated SVD is a low-rank
    approximation of that order.  On the flat block ``B = L C0^{1/2}`` has
    singular values log-uniform over ``decades`` decades; tail modes are
    essentially invisible to the data.  The truth is
    ``x = C0^{1/2} (B^T B)^mu v`` with ``v`` constant on the flat block and
    ``||v|| = rho``.  The data carry white noise of norm exactly ``delta``.
    """
    i = np.arange(1, n + 1, dtype=float)
    flat = i <= n_flat
    lam = np.where(flat, 1.0, (i / n_flat) ** -order)
    beta = np.where(flat, 10.0 ** (-decades * (i - 1) / (n_flat - 1)),
                    10.0 ** -decades * np.sqrt(lam))
    s = beta / np.sqrt(lam)
    v = np.where(flat, rho / np.sqrt(n_flat), 0.0)
    x_dag = np.sqrt(lam) * beta ** (2 * mu) * v
    xi = GaussianSampler(noise_seed).standard_normal(n)
    xi *= delta / np.linalg.norm(xi)
    p = InverseProblem(_diag_map(s), SpdOperator.identity(n), SpdOperator.diagonal(lam),
                       np.zeros(n), s * x_dag + xi, delta, x_true=x_dag)
    p.order = order
    return p


def build_problem(spec: ExperimentSpec, seed: int) -> InverseProblem:
    if spec.problem == "radon":
        return tomography_problem(spec.d, spec.snr, spec.h, seed=seed)
    if spec.problem == "synthetic-diagonal":
        return synthetic_diagonal_problem(spec.n, spec.snr, seed=seed)
    return dense_random_problem(spec.n, max(spec.n + 4, int(1.2 * spec.n)), spec.snr, seed=seed)


def backend_config(spec: ExperimentSpec, backend: str, seed: int) -> AdaptiveConfig:
    b, gamma = MATCHED_SCHEDULES[backend]
    if spec.b is not None:
        b = spec.b
    if spec.gamma is not None:
        gamma = spec.gamma
    return AdaptiveConfig(alpha0=spec.alpha0, J0=spec.J0, b=b, gamma=gamma, tau=spec.tau,
                          radius=spec.radius, backend=backend, max_iter=spec.max_iter,
                          seed=seed, index_offset=spec.index_offset)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_rows(path):
    """Read a sweep CSV back as a list of dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sweep_adaptive(spec, out, manifest):
    files = []
    for seed in spec.seeds:
        problem = build_problem(spec, seed)
        manifest["seeds"].append({"data": seed})
        for backend in spec.backends:
            cfg = backend_config(spec, backend, seed)
            t0 = time.perf_counter()
            res = adaptive_run(problem, cfg, tikhonov_reference=spec.tikhonov_reference)
            manifest["runs"].append({
                "backend": backend, "seed": seed, "stopped_by": res.stopped_by,
                "iterations": len(res.records),
                "final_J": res.records[-1].J if res.records else None,
                "seconds": time.perf_counter() - t0})
            manifest["seeds"].append({"sampler": seed, "backend": backend})
            if not spec.timing:
                for r in res.records:
                    r.wall_time = 0.0
            path = os.path.join(out, f"adaptive_{backend}_seed{seed}.csv")
            write_records(path, res.records)
            files.append(path)
    return files


def _sweep_direct(spec, out, manifest, vary):
    files = []
    for seed in spec.seeds:
        problem = build_problem(spec, seed)
        manifest["seeds"].append({"data": seed})
        x_star = problem.x_true
        ns = np.linalg.norm(x_star)
        if vary == "J":
            grid = [(spec.alpha, J) for J in spec.Js]
        else:
            J = spec.J or math.ceil(problem.n / 5)
            grid = [(a, J) for a in spec.alphas]
        tik = {a: tikhonov_solve(problem, a) for a in sorted({a for a, _ in grid})}
        for backend in spec.backends:
            root = GaussianSampler(seed)
            rows = []
            fixed = None
            for idx, (a, J) in enumerate(grid):
                if vary == "alpha":
                    if fixed is None:
                        fixed = make_factor(backend, problem.prior_cov, J, root.spawn(0))
                    factor = fixed
                else:
                    factor = make_factor(backend, problem.prior_cov, J, root.spawn(idx))
                x = direct_eki(problem, factor, a)
                rows.append((backend, seed, factor.J, a,
                             float(np.linalg.norm(x - tik[a]) / ns),
                             float(np.linalg.norm(x - x_star) / ns),
                             problem.residual(x)))
            manifest["seeds"].append({"sampler": seed, "backend": backend})
            tag = "vary_J" if vary == "J" else "vary_alpha"
            path = os.path.join(out, f"{tag}_{backend}_seed{seed}.csv")
            _write_rows(path, SWEEP_HEADER, rows)
            files.append(path)
    return files


def rate_experiment(mu: float, deltas, backend: str = "svd", seeds=(0,), out=None,
                    data_seed: int = 0, tau: float = 1.2, alpha0: float = 1.0,
                    J0: int = 100, b: float = 0.5, max_iter: int = 200, manifest=None):
    """Convergence rate of adaptive EKI in the noise level.

    Runs adaptive EKI on :func:`source_condition_problem` for each noise
    level, records ``||x_K - x_dagger||`` at the discrepancy stop and fits
    the log-log slope of the seed-averaged error against ``delta``.  The
    noise draw depends only on ``data_seed``; ``seeds`` drive the sampler of
    stochastic backends and appear only in file names, so deterministic
    backends write identical CSVs for every seed.  Runs that do not stop by the discrepancy principle
    are excluded from the fit and counted.

    Returns
    -------
    dict with ``slope``, ``expected``, ``deltas``, ``errors``, ``excluded``,
    ``rows`` and ``files``.
    """
    if not 0 < mu <= 0.5:
        raise ValueError("mu must lie in (0, 1/2]")
    deltas = [float(d) for d in deltas]
    rows, files = [], []
    errors = {d: [] for d in deltas}
    excluded = 0
    for seed in seeds:
        seed_rows = []
        for delta in deltas:
            problem = source_condition_problem(mu, delta, noise_seed=data_seed)
            cfg = AdaptiveConfig(alpha0=alpha0, J0=J0, b=b, gamma=problem.order, tau=tau,
                                 backend=backend, max_iter=max_iter, seed=seed)
            res = adaptive_run(problem, cfg)
            err = float(np.linalg.norm(res.solution - problem.x_true))
            last = res.records[-1] if res.records else None
            row = (backend, delta, last.k if last else 0,
                   last.J if last else 0, last.alpha if last else cfg.alpha0,
                   last.residual if last else problem.residual(problem.x0), err,
                   res.stopped_by)
            seed_rows.append(row)
            if res.stopped_by == "discrepancy":
                errors[delta].append(err)
            else:
                excluded += 1
        rows.extend(seed_rows)
        if out is not None:
            path = os.path.join(out, f"rate_mu{mu:g}_{backend}_seed{seed}.csv")
            _write_rows(path, RATE_HEADER, seed_rows)
            files.append(path)
        if manifest is not None:
            manifest["seeds"].append({"sampler": seed, "backend": backend,
                                      "data": data_seed})
    used = [d for d in deltas if errors[d]]
    mean_err = [float(np.mean(errors[d])) for d in used]
    slope = loglog_slope(used, mean_err) if len(used) >= 2 else float("nan")
    result = {"slope": slope, "expected": 2 * mu / (2 * mu + 1), "deltas": used,
              "errors": mean_err, "excluded": excluded, "rows": rows, "files": files}
    if out is not None:
        with open(os.path.join(out, f"rate_mu{mu:g}_{backend}_fit.json"), "w") as fh:
            json.dump({k: result[k] for k in ("slope", "expected", "deltas", "errors",
                                               "excluded")}, fh, indent=2)
    return result


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run one sweep and write CSVs, ``manifest.json`` and a plot script."""
    out = spec.out
    os.makedirs(out, exist_ok=True)
    manifest = {
        "spec": spec.to_dict(),
        "versions": {"ekireg": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "seeds": [], "runs": [], "files": [], "status": "running",
    }
    try:
        if spec.sweep == "adaptive":
            files = _sweep_adaptive(spec, out, manifest)
        elif spec.sweep == "fixed-alpha-vary-J":
            files = _sweep_direct(spec, out, manifest, "J")
        elif spec.sweep == "fixed-J-vary-alpha":
            files = _sweep_direct(spec, out, manifest, "alpha")
        else:
            files = []
            for backend in spec.backends:
                res = rate_experiment(spec.mu, spec.deltas, backend, spec.seeds, out,
                                      data_seed=spec.data_seed, tau=spec.tau,
                                      manifest=manifest)
                files.extend(res["files"])
                manifest["runs"].append({"backend": backend, "slope": res["slope"],
                                         "expected": res["expected"],
                                         "excluded": res["excluded"]})
        manifest["files"] = [os.path.basename(f) for f in files]
        manifest["status"] = "ok"
        with open(os.path.join(out, f"plot_{spec.sweep.replace('-', '_')}.py"), "w") as fh:
            fh.write(plot_script(spec.sweep))
        return manifest
    except Exception as exc:
        manifest["status"] = f"failed: {exc}"
        raise
    finally:
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)


_PLOT_TEMPLATE = '''"""Render {title} from the CSVs in this directory."""
import csv
import glob
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots(figsize=(6, 4))
for path in sorted(glob.glob(os.path.join(here, "{pattern}"))):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        continue
    xs = [float(r["{x}"]) for r in rows if r["{y}"]]
    ys = [float(r["{y}"]) for r in rows if r["{y}"]]
    ax.plot(xs, ys, marker="o", label=os.path.basename(path)[:-4])
ax.set_xlabel("{xlabel}")
ax.set_ylabel("{ylabel}")
{scales}
ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(os.path.join(here, "{png}"), dpi=150)
'''

_PLOTS = {
    "adaptive": dict(title="e_rel against iteration", pattern="adaptive_*.csv", x="k",
                     y="e_rel", xlabel="iteration k", ylabel="e_rel",
                     scales='ax.set_yscale("log")', png="fig_adaptive.png"),
    "fixed-alpha-vary-J": dict(title="e_app against J", pattern="vary_J_*.csv", x="J",
                               y="e_app", xlabel="sample size J", ylabel="e_app",
                               scales='ax.set_xscale("log")\nax.set_yscale("log")',
                               png="fig_vary_J.png"),
    "fixed-J-vary-alpha": dict(title="e_app against alpha", pattern="vary_alpha_*.csv",
                               x="alpha", y="e_app", xlabel="alpha", ylabel="e_app",
                               scales='ax.set_xscale("log")\nax.set_yscale("log")\n'
                                      'ax.invert_xaxis()',
                               png="fig_vary_alpha.png"),
    "rate-vs-delta": dict(title="error against noise level", pattern="rate_*_seed*.csv",
                          x="delta", y="error", xlabel="delta",
                          ylabel="||x - x_dagger||",
                          scales='ax.set_xscale("log")\nax.set_yscale("log")',
                          png="fig_rate.png"),
}


def plot_script(sweep: str) -> str:
    return _PLOT_TEMPLATE.format(**_PLOTS[sweep])
