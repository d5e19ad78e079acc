import json
import os

import numpy as np
import pytest

from ekireg import experiments
from ekireg.adaptive import read_records, write_records
from ekireg.experiments import (RATE_HEADER, SWEEP_HEADER, ExperimentSpec, ExperimentSpecError,
                                rate_experiment, read_rows, run_experiment,
                                source_condition_problem, synthetic_diagonal_problem)


def csv_files(path):
    return sorted(f for f in os.listdir(path) if f.endswith(".csv"))


def column(path, name):
    return np.array([float(r[name]) for r in read_rows(path)])


# --- spec -------------------------------------------------------------------

@pytest.mark.parametrize("kw,field", [
    (dict(sweep="fixed-alpha-vary-J", Js=[]), "Js"),
    (dict(sweep="fixed-J-vary-alpha", alphas=[]), "alphas"),
    (dict(sweep="rate-vs-delta", deltas=[]), "deltas"),
    (dict(backends=[]), "backends"),
    (dict(seeds=[]), "seeds"),
    (dict(seeds=[1, 1]), "seeds"),
    (dict(backends=["qr"]), "backends"),
    (dict(problem="mri"), "problem"),
    (dict(tau=1.0), "tau"),
    (dict(b=1.5), "b"),
])
def test_spec_validation_names_field(kw, field):
    with pytest.raises(ExperimentSpecError) as exc:
        ExperimentSpec(**kw)
    assert exc.value.field == field


def test_spec_from_key_value_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# vary-J sweep on the diagonal problem\nproblem = synthetic-diagonal\n"
                    "sweep = fixed-alpha-vary-J\nbackends = svd, nystroem\nseeds = 3,4\n"
                    "Js = 2,4,8\nalpha = 0.05\nindex-offset = 0\nb = none\n")
    spec = ExperimentSpec.from_file(path)
    assert spec.backends == ["svd", "nystroem"] and spec.seeds == [3, 4]
    assert spec.Js == [2, 4, 8] and spec.alpha == 0.05 and spec.index_offset == 0
    assert spec.b is None


def test_spec_file_unknown_field(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("colour = red\n")
    with pytest.raises(ExperimentSpecError, match="colour"):
        ExperimentSpec.from_file(path)


# --- sweeps -----------------------------------------------------------------

def test_vary_J_svd_monotone(tmp_path):
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="fixed-alpha-vary-J",
                          backends=["svd", "nystroem", "anomaly"], seeds=[0, 1],
                          Js=[2, 4, 8, 12, 16, 24, 30], alpha=0.03, out=str(tmp_path))
    manifest = run_experiment(spec)
    assert len(manifest["files"]) == 6
    for seed in (0, 1):
        e = column(tmp_path / f"vary_J_svd_seed{seed}.csv", "e_app")
        assert np.all(np.diff(e) <= 1e-12)
        assert e[-1] <= 1e-10


def test_vary_alpha_explodes_below_threshold(tmp_path):
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="fixed-J-vary-alpha",
                          seeds=[0, 1], out=str(tmp_path))
    run_experiment(spec)
    for backend in ("anomaly", "nystroem", "svd"):
        for seed in (0, 1):
            e = column(tmp_path / f"vary_alpha_{backend}_seed{seed}.csv", "e_app")
            i = int(np.argmin(e))
            assert np.all(np.diff(e[i:]) >= -1e-12)
            assert e[-1] >= 1.2 * e[i]


def test_adaptive_sweep_and_manifest_rerun(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="adaptive", seeds=[0, 5],
                          J0=2, b=0.6, gamma=1.0, index_offset=0, out=str(out1))
    manifest = run_experiment(spec)
    assert manifest["status"] == "ok"
    assert {(s.get("sampler"), s.get("backend")) for s in manifest["seeds"] if "sampler" in s} \
        == {(s, b) for s in (0, 5) for b in ("anomaly", "nystroem", "svd")}
    assert {s["data"] for s in manifest["seeds"] if "data" in s} == {0, 5}
    saved = json.loads((out1 / "manifest.json").read_text())
    assert saved["spec"]["seeds"] == [0, 5] and "numpy" in saved["versions"]
    spec2 = ExperimentSpec.from_file(out1 / "manifest.json")
    spec2.out = str(out2)
    run_experiment(spec2)
    assert csv_files(out1) == csv_files(out2)
    for f in csv_files(out1):
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes()


def test_csv_roundtrip_bit_identical(tmp_path):
    spec = ExperimentSpec(problem="dense-random", sweep="adaptive", backends=["nystroem"],
                          n=12, J0=2, b=0.6, gamma=1.0, out=str(tmp_path / "a"))
    run_experiment(spec)
    spec = ExperimentSpec(problem="dense-random", sweep="fixed-alpha-vary-J", n=12,
                          Js=[2, 5, 12], out=str(tmp_path / "b"))
    run_experiment(spec)
    for sub in ("a", "b"):
        for f in csv_files(tmp_path / sub):
            path = tmp_path / sub / f
            text = path.read_bytes()
            if f.startswith("adaptive"):
                write_records(path, read_records(path))
            else:
                rows = read_rows(path)
                experiments._write_rows(path, SWEEP_HEADER,
                                        [[r[h] for h in SWEEP_HEADER] for r in rows])
            assert path.read_bytes() == text


def test_plot_script_generated(tmp_path):
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="fixed-alpha-vary-J",
                          backends=["svd"], Js=[2, 4], out=str(tmp_path))
    run_experiment(spec)
    src = (tmp_path / "plot_fixed_alpha_vary_J.py").read_text()
    compile(src, "plot.py", "exec")
    assert "vary_J_*.csv" in src and '"e_app"' in src


def test_runtime_failure_flushes_partial_output(tmp_path, monkeypatch):
    real = experiments.direct_eki
    calls = []

    def flaky(problem, factor, alpha):
        calls.append(factor.method)
        if factor.method == "nystroem":
            raise np.linalg.LinAlgError("injected")
        return real(problem, factor, alpha)

    monkeypatch.setattr(experiments, "direct_eki", flaky)
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="fixed-alpha-vary-J",
                          backends=["svd", "nystroem"], Js=[2, 4], out=str(tmp_path))
    with pytest.raises(np.linalg.LinAlgError):
        run_experiment(spec)
    assert (tmp_path / "vary_J_svd_seed0.csv").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["status"].startswith("failed")


# --- rate experiment ----------------------------------------------------------

def test_source_condition_problem_construction():
    p = source_condition_problem(0.5, 1e-2, noise_seed=3)
    i = np.arange(1, 401)
    lam = p.prior_cov.diag
    s = p.forward.diag
    beta = s * np.sqrt(lam)
    v = np.where(i <= 100, 0.1, 0.0)
    np.testing.assert_allclose(p.x_true, np.sqrt(lam) * beta * v, rtol=1e-14)
    assert np.linalg.norm(p.y_hat - s * p.x_true) == pytest.approx(1e-2, rel=1e-12)
    assert beta[0] == 1.0 and beta[99] == pytest.approx(1e-6)


def test_rate_svd_seeds_give_identical_csvs(tmp_path):
    res = rate_experiment(0.5, [1e-2], "svd", seeds=(0, 1), out=str(tmp_path))
    a, b = (tmp_path / os.path.basename(f) for f in res["files"])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == ",".join(RATE_HEADER)


def test_rate_excludes_nonconverged(tmp_path):
    res = rate_experiment(0.5, [1e-1, 1e-4], "svd", seeds=(0,), out=str(tmp_path),
                          max_iter=2)
    assert res["excluded"] >= 1
    assert json.loads((tmp_path / "rate_mu0.5_svd_fit.json").read_text())["excluded"] \
        == res["excluded"]


def test_rate_rejects_mu():
    with pytest.raises(ValueError):
        rate_experiment(0.7, [1e-1, 1e-2])


def test_rate_sweep_via_runner(tmp_path):
    spec = ExperimentSpec(problem="synthetic-diagonal", sweep="rate-vs-delta",
                          backends=["svd"], mu=0.25, deltas=[1e-1, 1e-2, 1e-3],
                          out=str(tmp_path))
    manifest = run_experiment(spec)
    run = manifest["runs"][0]
    assert run["excluded"] == 0 and abs(run["slope"] - 1 / 3) <= 0.15


def test_synthetic_diagonal_problem_noise():
    p = synthetic_diagonal_problem(30, snr=10.0, seed=2)
    y = p.forward.apply(p.x_true)
    assert abs(np.linalg.norm(p.y_hat - y) - 1.0) <= 1e-12
    assert np.linalg.norm(y) == pytest.approx(10.0, rel=1e-12)
