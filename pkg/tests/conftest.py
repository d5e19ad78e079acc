import numpy as np
import pytest

from ekireg.operators import LinearMap, SpdOperator
from ekireg.solvers import InverseProblem

ACCEPTANCE_LINES = []


def random_spd(rng, n, decay=1.0, ridge=0.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.arange(1, n + 1, dtype=float) ** -decay + ridge
    C = (Q * lam) @ Q.T
    return 0.5 * (C + C.T)


def dense_problem(rng, n, m, diag_R=True, decay=1.0):
    """Random dense problem with SPD prior and diagonal (or dense) noise weight."""
    Lm = rng.standard_normal((m, n))
    C0 = SpdOperator.from_dense(random_spd(rng, n, decay, ridge=0.05))
    if diag_R:
        R = SpdOperator.diagonal(rng.uniform(0.5, 2.0, m))
    else:
        R = SpdOperator.from_dense(random_spd(rng, m, 0.5, ridge=0.2))
    return InverseProblem(LinearMap.from_matrix(Lm), R, C0, rng.standard_normal(n),
                          rng.standard_normal(m), delta=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def bench_runs():
    """Adaptive runs on the d=32 bench, 10 seeds, all three backends."""
    from ekireg.adaptive import adaptive_run
    from ekireg.experiments import ExperimentSpec, backend_config
    from ekireg.tomo import tomography_problem

    spec = ExperimentSpec(problem="radon", sweep="adaptive", J0=50, alpha0=1.0,
                          tau=1.2, index_offset=1)
    runs = {}
    for seed in range(10):
        problem = tomography_problem(32, 10.0, seed=seed)
        for backend in ("anomaly", "nystroem", "svd"):
            res = adaptive_run(problem, backend_config(spec, backend, seed))
            runs[seed, backend] = (res, problem)
    return runs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
