"""
Command-line entry point.

Verbs
-----
run      run a sweep described by ``--config`` and/or flags
rate     convergence rate in the noise level on a source-condition problem
phantom  write the Shepp-Logan phantom (CSV and binary)
check    run the invariant suite on small instances

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_schedule_flags(p):
    p.add_argument("--backend", help="comma-separated list of anomaly, nystroem, svd")
    p.add_argument("--seed", help="comma-separated list of seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tau", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--j0", type=int)
    p.add_argument("--alpha0", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ekireg", description="EKI as low-rank Tikhonov regularization")
    sub = parser.add_subparsers(dest="verb", parser_class=_Parser)

    p = sub.add_parser("run", help="run an experiment sweep")
    p.add_argument("--config", help="key = value file or manifest.json of an earlier run")
    _add_schedule_flags(p)
    p.add_argument("--problem", choices=["radon", "synthetic-diagonal", "dense-random"])
    p.add_argument("--sweep", choices=["adaptive", "fixed-alpha-vary-J",
                                       "fixed-J-vary-alpha", "rate-vs-delta"])
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--index-offset", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--alpha", type=float, help="fixed alpha of the vary-J sweep")
    p.add_argument("--j", type=int, help="fixed J of the vary-alpha sweep")
    p.add_argument("--alphas", help="comma-separated alpha grid")
    p.add_argument("--js", help="comma-separated J grid")
    p.add_argument("--mu", type=float)
    p.add_argument("--deltas", help="comma-separated noise levels")

    p = sub.add_parser("rate", help="convergence rate against the noise level")
    _add_schedule_flags(p)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--deltas", default="1e-1,1e-2,1e-3,1e-4")
    p.add_argument("--data-seed", type=int, default=0)

    p = sub.add_parser("phantom", help="write the Shepp-Logan phantom")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--out", default=".")

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=16)
    return parser


_RUN_FLAGS = {
    "backend": "backends", "seed": "seeds", "out": "out", "tau": "tau", "b": "b",
    "gamma": "gamma", "j0": "J0", "alpha0": "alpha0", "problem": "problem",
    "sweep": "sweep", "d": "d", "n": "n", "snr": "snr", "h": "h",
    "index_offset": "index_offset", "max_iter": "max_iter", "alpha": "alpha", "j": "J",
    "alphas": "alphas", "js": "Js", "mu": "mu", "deltas": "deltas",
}


def _spec_from_args(args):
    from .experiments import ExperimentSpec
    base = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"--config: no such file {args.config!r}")
        base = ExperimentSpec.from_file(args.config).to_dict()
    for flag, name in _RUN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            base[name] = v
    return ExperimentSpec(**base)


def _cmd_run(args):
    from .experiments import run_experiment
    spec = _spec_from_args(args)
    manifest = run_experiment(spec)
    print(f"wrote {len(manifest['files'])} CSV files to {spec.out}")
    for r in manifest["runs"]:
        print("  " + ", ".join(f"{k}={v}" for k, v in r.items() if k != "seconds"))


def _seeds(s):
    if s is None:
        return [0]
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--seed: {exc}") from exc


def _cmd_rate(args):
    from .experiments import rate_experiment
    if not 0 < args.mu <= 0.5:
        raise UsageError("--mu must lie in (0, 1/2]")
    try:
        deltas = [float(x) for x in args.deltas.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--deltas: {exc}") from exc
    if len(deltas) < 2:
        raise UsageError("--deltas needs at least two values")
    backends = (args.backend or "svd").split(",")
    out = args.out or "runs/rate"
    os.makedirs(out, exist_ok=True)
    kw = {k: v for k, v in (("tau", args.tau), ("alpha0", args.alpha0), ("J0", args.j0),
                            ("b", args.b)) if v is not None}
    if args.b is not None and not 0 < args.b < 1:
        raise UsageError("--b must lie in (0, 1)")
    if args.gamma is not None:
        raise UsageError("--gamma is fixed by the problem's spectral decay in `rate`")
    summary = {}
    for backend in backends:
        res = rate_experiment(args.mu, deltas, backend, _seeds(args.seed), out,
                              data_seed=args.data_seed, **kw)
        summary[backend] = {k: res[k] for k in ("slope", "expected", "excluded")}
        print(f"{backend}: slope {res['slope']:.3f} (expected {res['expected']:.3f}), "
              f"{res['excluded']} runs excluded")
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump({"mu": args.mu, "deltas": deltas, "seeds": _seeds(args.seed),
                   "data_seed": args.data_seed, "backends": backends, **kw,
                   "results": summary}, fh, indent=2)


def _cmd_phantom(args):
    from .io import save_binary, save_csv
    from .tomo import shepp_logan
    if args.d < 8:
        raise UsageError("--d must be >= 8")
    os.makedirs(args.out, exist_ok=True)
    img = shepp_logan(args.d)
    stem = os.path.join(args.out, f"phantom_d{args.d}")
    save_csv(stem + ".csv", img)
    save_binary(stem + ".bin", img)
    print(f"wrote {stem}.csv and {stem}.bin")


def run_checks(seed: int = 0, d: int = 16):
    """Invariant suite; returns a list of ``(name, passed, detail)``."""
    from .lowrank import GaussianSampler, approx_error, make_factor, svd_factor
    from .operators import LinearMap, SpdOperator, adjoint_test
    from .solvers import (EkiState, InverseProblem, direct_eki, eki_step_sqrt,
                          tikhonov_solve)
    from .tomo import RadonGeometry, make_noisy_data, ou_covariance, radon_operator

    rng = np.random.default_rng(seed)
    out = []

    L = radon_operator(RadonGeometry(d))
    defect = adjoint_test(L, seed=seed)
    out.append(("radon adjoint", defect < 1e-10, f"defect {defect:.1e}"))

    C0 = ou_covariance(d, 0.25)
    v = rng.standard_normal(C0.dim)
    e = np.linalg.norm(C0.apply_sqrt(C0.apply_sqrt(v)) - C0.apply(v)) / np.linalg.norm(C0.apply(v))
    out.append(("prior sqrt", e < 1e-8, f"rel err {e:.1e}"))

    n, m, J = 12, 10, 5
    M = rng.standard_normal((n, n))
    C = SpdOperator.from_dense(M @ M.T / n + 0.1 * np.eye(n))
    p = InverseProblem(LinearMap.from_matrix(rng.standard_normal((m, n))),
                       SpdOperator.diagonal(rng.uniform(0.5, 2.0, m)), C,
                       rng.standard_normal(n), rng.standard_normal(m))
    A = make_factor("nystroem", C, J, GaussianSampler(seed))
    state = EkiState(0, p.x0.copy(), A)
    worst = 0.0
    for k in range(1, 6):
        state = eki_step_sqrt(p, state)
        ref = direct_eki(p, A, 1.0 / k)
        worst = max(worst, np.linalg.norm(state.x_hat - ref) / np.linalg.norm(ref))
    out.append(("k-step equivalence", worst < 1e-8, f"max rel err {worst:.1e}"))

    xs = direct_eki(p, C.apply_sqrt(np.eye(n)), 0.3)
    xt = tikhonov_solve(p, 0.3, space="data")
    e = np.linalg.norm(xs - xt) / np.linalg.norm(xt)
    out.append(("tikhonov oracle", e < 1e-8, f"rel err {e:.1e}"))

    lam = C.eigh()[0]
    worst = max(abs(approx_error(svd_factor(C, j), C) - (lam[j] if j < n else 0.0))
                for j in range(1, n + 1))
    out.append(("svd optimality", worst < 1e-10, f"max defect {worst:.1e}"))

    y = rng.standard_normal(50)
    nd = make_noisy_data(y, 10.0, GaussianSampler(seed))
    e = abs(np.linalg.norm(nd.y_hat - y * nd.scale) - nd.delta)
    out.append(("noise protocol", e < 1e-12, f"|delta - 1| {e:.1e}"))
    return out


def _cmd_check(args):
    results = run_checks(args.seed, args.d)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    if not all(ok for _, ok, _ in results):
        raise RuntimeError("invariant suite failed")


_COMMANDS = {"run": _cmd_run, "rate": _cmd_rate, "phantom": _cmd_phantom,
             "check": _cmd_check}


def main(argv=None) -> int:
    from .experiments import ExperimentSpecError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        _COMMANDS[args.verb](args)
    except (UsageError, ExperimentSpecError) as exc:
        print(f"ekireg {args.verb}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"ekireg {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
