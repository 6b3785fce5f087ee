import csv
import io
import json

import numpy as np
import pytest

from dp_ipw.core import Dataset
from dp_ipw.harness import (
    METRICS,
    ExperimentConfig,
    SweepReport,
    emit,
    report_csv,
    report_json,
    run_experiment,
    run_sweep,
    run_trial,
)
from dp_ipw.ingest import write_csv

SMALL = dict(trials=4, epsilon_grid=(0.3, 0.9), m_grid=(200, 400), n_estimate=150, d=5)


def _lalonde_like(tmp_path, zero_y=False, n_treated=297, n_control=425):
    g = np.random.default_rng(0)
    n = n_treated + n_control
    x = g.standard_normal((n, 4))
    x /= np.linalg.norm(x, axis=1).max()
    t = np.r_[np.ones(n_treated), np.zeros(n_control)]
    y = np.zeros(n) if zero_y else 1000 * t + 100 * g.standard_normal(n)
    path = tmp_path / "lalonde.csv"
    write_csv(path, Dataset(x, t, y))
    return str(path)


def test_config_validation_and_round_trip():
    cfg = ExperimentConfig(**SMALL)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    for bad in (
        {"trials": 0},
        {"epsilon_grid": ()},
        {"m_grid": ()},
        {"epsilon_grid": (0.5, 1.0)},
        {"source": "web"},
        {"source": "csv"},
        {"tau_true": None},
    ):
        with pytest.raises(ValueError):
            ExperimentConfig(**{**SMALL, **bad})
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"trails": 3})


def test_cells():
    assert ExperimentConfig(**SMALL).cells() == [(0.3, 200), (0.3, 400), (0.9, 200), (0.9, 400)]


def test_run_trial_deterministic_and_consistent():
    cfg = ExperimentConfig(**SMALL)
    a, b = run_trial(cfg, 3, 0.3, 200), run_trial(cfg, 3, 0.3, 200)
    assert a.ok and a.to_dict() == b.to_dict()
    assert a.m == 200 and a.n_estimate == 150
    assert a.neg_n == (a.tau_n <= 0) and a.neg_n_eps == (a.tau_n_eps <= 0)
    assert a.joint_neg == (a.neg_n and a.neg_n_eps)
    assert a.flip_n == (np.sign(a.tau_n) != np.sign(a.tau_hat))
    assert run_trial(cfg, 4, 0.3, 200).to_dict() != a.to_dict()


def test_trials_share_data_across_cells():
    cfg = ExperimentConfig(**SMALL)
    assert run_trial(cfg, 1, 0.3, 200).tau_hat == run_trial(cfg, 1, 0.9, 200).tau_hat


def test_zero_outcomes(tmp_path):
    path = _lalonde_like(tmp_path, zero_y=True)
    base = dict(source="csv", csv_path=path, trials=2, tau_true=None, protocol={"kind": "lalonde_balanced"})
    rec = run_trial(ExperimentConfig(**base), 0)
    assert rec.ok and rec.tau_hat == 0.0 and rec.tau_n == 0.0 and rec.tau_n_eps == 0.0
    noisy = run_trial(ExperimentConfig(**base, c_y=1.0), 0)
    assert noisy.tau_n == 0.0 and noisy.tau_n_eps != 0.0 and noisy.sigma_n > 0


def test_stage_errors_are_recorded(tmp_path):
    path = _lalonde_like(tmp_path, n_treated=40)
    cfg = ExperimentConfig(
        source="csv", csv_path=path, trials=3, protocol={"kind": "lalonde_balanced"}
    )
    rec = run_trial(cfg, 0)
    assert not rec.ok and rec.error_stage == "data" and "SizeError" in rec.error
    rep = run_sweep(cfg)
    assert all(c["degraded"] and c["trials_failed"] == 3 for c in rep.cells)


def test_csv_source_sweep(tmp_path):
    cfg = ExperimentConfig(
        source="csv",
        csv_path=_lalonde_like(tmp_path),
        trials=5,
        epsilon_grid=(0.2, 0.9),
        protocol={"kind": "lalonde_balanced"},
    )
    rep = run_sweep(cfg)
    assert len(rep.cells) == 2 and all(c["m"] == 500 for c in rep.cells)
    assert all(t["n_estimate"] == 200 for t in rep.trials)
    assert all(abs(t["tau_hat"]) > 100 for t in rep.trials)


def test_sweep_shape_and_invariants():
    cfg = ExperimentConfig(**SMALL)
    rep = run_sweep(cfg)
    assert len(rep.cells) == 4 and len(rep.trials) == 16
    for c in rep.cells:
        for key in ("rho_n", "rho_n_eps", "joint_neg", "cond_neg_n", "cond_joint_neg"):
            assert c[key] is None or 0.0 <= c[key] <= 1.0
        assert not c["degraded"]
    for t in rep.trials:
        th = t["theory"]
        if th["thm2_bound"] is not None:
            assert th["thm2_bound"] <= th["thm1_bound"]


def test_one_trial_sweep_matches_run_trial():
    cfg = ExperimentConfig(**{**SMALL, "trials": 1, "epsilon_grid": (0.5,), "m_grid": (300,)})
    rep = run_sweep(cfg)
    rec = run_trial(cfg, 0, 0.5, 300)
    c = rep.cells[0]
    assert rep.trials[0] == json.loads(json.dumps(rec.to_dict()))
    assert c["mean_tau_hat"] == rec.tau_hat and c["mean_tau_n_eps"] == rec.tau_n_eps
    assert c["rho_n"] == float(rec.flip_n)


def test_parallel_equals_serial():
    cfg = ExperimentConfig(**{**SMALL, "trials": 3})
    assert report_json(run_sweep(cfg, workers=2)) == report_json(run_sweep(cfg))


def test_emit_round_trip(tmp_path):
    rep = run_sweep(ExperimentConfig(**SMALL))
    paths = emit(rep, tmp_path / "out", "s")
    assert [p.name for p in paths] == ["s.csv", "s.json"]
    back = SweepReport.from_dict(json.loads(paths[1].read_text()))
    assert back.to_dict() == rep.to_dict()
    rows = list(csv.reader(io.StringIO(paths[0].read_text())))
    assert rows[0] == ["epsilon", "m", "metric", "value"]
    assert len(rows) - 1 == len(rep.cells) * (len(METRICS) + 1)
    assert rows[1][0] == "0.29999999999999999"
    assert report_csv(rep) == paths[0].read_text()


def test_emit_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rep = SweepReport({}, [], [])
    with pytest.raises(OSError, match="file"):
        emit(rep, blocker / "sub")


def test_run_experiment_per_tau():
    cfg = ExperimentConfig(**{**SMALL, "trials": 2})
    out = run_experiment(cfg, [0.1, 2.0])
    assert sorted(out) == [0.1, 2.0]
    assert out[0.1].config["tau_true"] == 0.1
