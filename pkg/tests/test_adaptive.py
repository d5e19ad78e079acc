import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ekireg.adaptive import (RECORD_HEADER, AdaptiveConfig, AdaptiveRunError, IterationRecord,
                             adaptive_run, discrepancy_stop, project_ball, read_records,
                             schedule, write_records)
from ekireg.experiments import synthetic_diagonal_problem
from ekireg.operators import LinearMap, SpdOperator
from ekireg.solvers import InverseProblem, tikhonov_solve

from conftest import dense_problem


# --- config -----------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(b=1.0), dict(b=0.0), dict(tau=1.0), dict(gamma=0.0),
                                dict(alpha0=-1.0), dict(J0=0), dict(radius=0.0),
                                dict(backend="qr"), dict(max_iter=0)])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        AdaptiveConfig(**kw)


def test_config_file_roundtrip(tmp_path):
    cfg = AdaptiveConfig(alpha0=2.0, J0=7, b=0.5, gamma=2.0, tau=1.5, backend="svd",
                         max_iter=9, seed=4, index_offset=1)
    path = tmp_path / "cfg.txt"
    path.write_text("# adaptive run\n" + cfg.to_text().replace("index_offset", "index-offset"))
    assert AdaptiveConfig.from_file(path) == cfg


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("alpha0 = 1\nfoo = 2\n")
    with pytest.raises(ValueError, match="unknown key"):
        AdaptiveConfig.from_file(path)


# --- schedule ---------------------------------------------------------------

def test_schedule_k0():
    assert schedule(AdaptiveConfig(b=0.8, gamma=1.0, alpha0=1.0, J0=50), 0) == (1.0, 50)


def test_schedule_k1():
    alpha, J = schedule(AdaptiveConfig(b=0.8, gamma=1.0, J0=50), 1)
    assert J == 63 and alpha == 0.8


def test_schedules_share_sample_sizes():
    a = AdaptiveConfig(b=math.sqrt(0.8), gamma=0.5, J0=50)
    b = AdaptiveConfig(b=0.8, gamma=1.0, J0=50)
    assert [schedule(a, k)[1] for k in range(21)] == [schedule(b, k)[1] for k in range(21)]


def test_schedule_exact_formula():
    cfg = AdaptiveConfig(b=0.7, gamma=1.5, alpha0=3.0, J0=11)
    for k in range(15):
        alpha, J = schedule(cfg, k)
        assert alpha == 0.7 ** k * 3.0
        assert J == math.ceil(0.7 ** (-k / 1.5) * 11 * (1 - 1e-12))


def test_schedule_index_offset():
    cfg = AdaptiveConfig(b=0.8, gamma=1.0, J0=50, index_offset=1)
    assert schedule(cfg, 1)[1] == 50
    assert schedule(cfg, 2)[1] == 63


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.2, 5.0), st.floats(1e-3, 1e3), st.integers(1, 200))
def test_schedule_monotone(b, gamma, alpha0, J0):
    cfg = AdaptiveConfig(b=b, gamma=gamma, alpha0=alpha0, J0=J0)
    prev = schedule(cfg, 0)
    for k in range(1, 25):
        cur = schedule(cfg, k)
        assert cur[0] < prev[0]
        assert cur[1] >= prev[1]
        assert cur[0] * cur[1] ** gamma >= alpha0 * J0 ** gamma * (1 - 1e-9)
        prev = cur


# --- projection and stopping ------------------------------------------------

def test_project_inside():
    x0 = np.array([1.0, 2.0])
    x, flag = project_ball(x0, x0, 1.0)
    assert np.array_equal(x, x0) and not flag


def test_project_outside():
    x, flag = project_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0)
    np.testing.assert_allclose(x, [0.6, 0.8])
    assert flag


def test_project_infinite_radius():
    x, flag = project_ball(np.array([1e300, 0.0]), np.zeros(2), math.inf)
    assert not flag


def test_projection_nonexpansive(rng):
    x0 = rng.standard_normal(5)
    r = 1.5
    for _ in range(100):
        x = x0 + 3 * rng.standard_normal(5)
        z, _ = project_ball(x0 + rng.standard_normal(5), x0, r)
        assert np.linalg.norm(project_ball(x, x0, r)[0] - z) <= np.linalg.norm(x - z) + 1e-12


def test_discrepancy_boundaries():
    assert discrepancy_stop(0.0, 1.2, 1.0)
    assert discrepancy_stop(1.2, 1.2, 1.0)
    assert not discrepancy_stop(1.2000001, 1.2, 1.0)


# --- driver -----------------------------------------------------------------

def test_stops_immediately_when_x0_fits(rng):
    p = dense_problem(rng, 6, 5)
    p.delta = 10 * p.residual(p.x0)
    x, records, stopped = adaptive_run(p, AdaptiveConfig(J0=2, backend="svd"))
    assert stopped == "discrepancy" and len(records) == 1 and records[0].k == 1


def assert_sound(records, tau, delta):
    assert records[-1].residual <= tau * delta
    assert all(r.residual > tau * delta for r in records[:-1])


@pytest.mark.parametrize("backend", ["svd", "nystroem", "anomaly"])
def test_synthetic_diagonal_discrepancy(backend):
    p = synthetic_diagonal_problem(30, snr=10.0, seed=1)
    cfg = AdaptiveConfig(alpha0=1.0, J0=2, b=0.5, gamma=1.0, backend=backend, seed=3)
    x, records, stopped = adaptive_run(p, cfg)
    if backend == "svd":
        assert stopped == "discrepancy"
    if stopped == "discrepancy":
        assert_sound(records, cfg.tau, p.delta)
        np.testing.assert_array_equal(x, x)
    for r in records:
        assert (r.alpha, r.J) == schedule(cfg, r.k)


def test_sample_cap():
    p = synthetic_diagonal_problem(30, snr=1e6, seed=0)
    cfg = AdaptiveConfig(alpha0=1.0, J0=10, b=0.5, backend="svd")
    _, records, stopped = adaptive_run(p, cfg)
    assert stopped == "sample_cap"
    assert records and records[-1].J <= 30 < schedule(cfg, records[-1].k + 1)[1]


def test_max_iter():
    p = synthetic_diagonal_problem(30, snr=1e6, seed=0)
    _, records, stopped = adaptive_run(p, AdaptiveConfig(J0=1, b=0.9, gamma=50.0,
                                                          backend="svd", max_iter=3))
    assert stopped == "max_iter" and len(records) == 3


def test_deterministic_records():
    p = synthetic_diagonal_problem(30, seed=2)
    cfg = AdaptiveConfig(J0=3, b=0.6, backend="nystroem", seed=5)
    a = adaptive_run(p, cfg).records
    b = adaptive_run(p, cfg).records
    strip = [(r.k, r.alpha, r.J, r.residual, r.e_rel) for r in a]
    assert strip == [(r.k, r.alpha, r.J, r.residual, r.e_rel) for r in b]


def test_errors_carry_iteration_index(rng):
    p = dense_problem(rng, 4, 3)
    p.prior_cov = SpdOperator(4, lambda v: v)     # no sqrt: anomaly backend must fail
    with pytest.raises(AdaptiveRunError, match="k=1"):
        adaptive_run(p, AdaptiveConfig(J0=2, backend="anomaly"))


def test_projection_only_for_stochastic(rng):
    p = dense_problem(rng, 6, 5)
    p.delta = 1e-6
    cfg = AdaptiveConfig(J0=2, b=0.5, backend="svd", radius=1e-6, max_iter=4)
    assert not any(r.projected for r in adaptive_run(p, cfg).records)


def test_projection_does_not_increase_tikhonov_gap():
    # ball radius = distance of the Tikhonov reference, so the reference lies in the ball;
    # free and projected runs draw the same factor, so the gaps are directly comparable
    n, m = 10, 12
    active = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        U, _ = np.linalg.qr(rng.standard_normal((m, n)))
        V, _ = np.linalg.qr(rng.standard_normal((n, n)))
        Lm = (U * np.logspace(0, -4, n)) @ V.T
        C0 = SpdOperator.diagonal(np.arange(1, n + 1, dtype=float) ** -2.0)
        p = InverseProblem(LinearMap.from_matrix(Lm), SpdOperator.identity(m), C0,
                           np.zeros(n), rng.standard_normal(m), delta=1e-8, x_true=np.ones(n))
        base = dict(alpha0=0.01, J0=3, b=0.5, backend="anomaly", seed=seed, max_iter=1)
        r = np.linalg.norm(tikhonov_solve(p, schedule(AdaptiveConfig(**base), 1)[0]) - p.x0)
        free = adaptive_run(p, AdaptiveConfig(**base), tikhonov_reference=True).records[0]
        proj = adaptive_run(p, AdaptiveConfig(radius=r, **base),
                            tikhonov_reference=True).records[0]
        active += proj.projected
        assert proj.e_app <= free.e_app + 1e-12
    assert active >= 3


def test_bench_nystroem_smaller_final_J(bench_runs):
    wins = 0
    for seed in range(10):
        nys, _ = bench_runs[seed, "nystroem"]
        std, _ = bench_runs[seed, "anomaly"]
        if nys.stopped_by == "discrepancy":
            wins += std.stopped_by != "discrepancy" or std.records[-1].J > nys.records[-1].J
    assert wins >= 8


# --- record I/O -------------------------------------------------------------

def test_records_roundtrip(tmp_path):
    recs = [IterationRecord(1, 0.8, 63, 1.2345678901234567, 0.1, None, False, 0.01),
            IterationRecord(2, 0.64, 79, 0.9, None, 1e-17, True, 0.02)]
    path = tmp_path / "r.csv"
    write_records(path, recs)
    assert path.read_text().splitlines()[0] == ",".join(RECORD_HEADER)
    assert read_records(path) == recs
    text = path.read_text()
    write_records(path, read_records(path))
    assert path.read_text() == text


def test_records_bad_header(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_records(path)
