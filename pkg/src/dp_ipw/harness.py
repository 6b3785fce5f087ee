"""Monte-Carlo driver for the private IPW pipeline.

One trial runs the whole pipeline once: draw or resample data, split it, fit
the propensity model, perturb its weights, estimate the ATE on the held-out
part, perturb the estimate, and evaluate the bounds. A sweep repeats that
over an (epsilon, m) grid and aggregates.

Random streams are keyed on ``(trial_index, purpose)`` only, so every cell
of a sweep sees the same underlying draws for a given trial index (common
random numbers). Differences between cells therefore reflect the cell
parameters rather than fresh sampling noise.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from dp_ipw.core import OutcomeBounds, PrivacyBudget, split_dataset
from dp_ipw.estimators import estimate, fully_private_estimate, partially_private_ate
from dp_ipw.ingest import CsvSchema, ResampleProtocol, load_csv, normalize_unit_ball, resample
from dp_ipw.privacy import privatize_weights
from dp_ipw.propensity import OptimizerSettings, train
from dp_ipw.rng import RngStream
from dp_ipw.synthgen import SynthConfig, generate_full
from dp_ipw.theory import theory_report

log = logging.getLogger(__name__)

DEFAULT_EPSILONS = (0.2, 0.4, 0.6, 0.8, 0.99)
DEFAULT_MS = (500, 1000, 1500, 2000, 2500)


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synthetic"
    trials: int = 100
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILONS
    m_grid: tuple[int, ...] = DEFAULT_MS
    n_estimate: int = 1000
    tau_true: float | None = 2.0
    trim_xi: float | None = 0.05
    delta: float = 1e-6
    lam: float = 0.1
    seed: int = 1
    # synthetic generator
    d: int = 50
    cov_scale: float = 9.0
    noise_var: float = 0.01
    freeze_coefficients: bool = False
    # optimiser
    lr: float | str = "auto"
    tol: float = 1e-8
    max_iters: int = 100_000
    intercept: bool = False
    # bounds
    c_y: float | None = None
    scalar_epsilon: float | None = None
    gamma: float = 0.05
    markov_deltas: tuple[float, ...] = (0.1, 0.5, 1.0)
    convention: str = "appendix_proof"
    # csv source
    csv_path: str | None = None
    test_csv_path: str | None = None
    schema: dict | None = None
    protocol: dict | None = None

    def __post_init__(self) -> None:
        for name in ("epsilon_grid", "m_grid", "markov_deltas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.source not in ("synthetic", "csv"):
            raise ValueError(f"source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.epsilon_grid or not self.m_grid:
            raise ValueError("epsilon_grid and m_grid must be non-empty")
        for eps in self.epsilon_grid:
            PrivacyBudget(eps, self.delta)
        if self.source == "synthetic" and self.tau_true is None:
            raise ValueError("synthetic source needs tau_true")
        if self.source == "csv" and not self.csv_path:
            raise ValueError("csv source needs csv_path")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def cells(self) -> list[tuple[float, int]]:
        if self.source == "csv":
            proto = ResampleProtocol(**(self.protocol or {}))
            return [(eps, 2 * proto.fit_per_arm) for eps in self.epsilon_grid]
        return [(eps, m) for eps in self.epsilon_grid for m in self.m_grid]


@dataclass
class TrialRecord:
    trial_index: int
    epsilon: float
    m: int
    tau_hat: float | None = None
    tau_n: float | None = None
    tau_n_eps: float | None = None
    sigma_m: float | None = None
    sigma_n: float | None = None
    c_y: float | None = None
    n_estimate: int | None = None
    flip_n: bool | None = None
    flip_n_eps: bool | None = None
    neg_n: bool | None = None
    neg_n_eps: bool | None = None
    joint_neg: bool | None = None
    theory: dict | None = None
    error_stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error_stage is None

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=4)
def _load_sources(csv_path: str, test_csv_path: str | None, schema_json: str):
    schema = CsvSchema.from_dict(json.loads(schema_json))
    train_tbl = load_csv(csv_path, schema)
    test_tbl = load_csv(test_csv_path, schema) if test_csv_path else None
    parts = []
    train_parts = train_tbl.by_realization()
    test_parts = test_tbl.by_realization() if test_tbl is not None else None
    for r in sorted(train_parts):
        d_train, _ = normalize_unit_ball(train_parts[r])
        d_test = normalize_unit_ball(test_parts[r])[0] if test_parts is not None else None
        parts.append((d_train, d_test))
    return parts


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def _pipeline_data(config: ExperimentConfig, trial_index: int, m: int):
    if config.source == "synthetic":
        synth = SynthConfig(
            n_units=m + config.n_estimate,
            d=config.d,
            tau_true=config.tau_true,
            cov_scale=config.cov_scale,
            noise_var=config.noise_var,
            seed=config.seed,
            freeze_coefficients=config.freeze_coefficients,
        )
        draw = generate_full(synth, RngStream.for_trial(config.seed, trial_index, "data"))
        d_m, d_n, _ = split_dataset(
            draw.data, m, RngStream.for_trial(config.seed, trial_index, "split")
        )
        return d_m, d_n
    parts = _load_sources(
        config.csv_path, config.test_csv_path, json.dumps(config.schema or {}, sort_keys=True)
    )
    d_train, d_test = parts[trial_index % len(parts)]
    proto = ResampleProtocol(**(config.protocol or {}))
    return resample(
        d_train, proto, RngStream.for_trial(config.seed, trial_index, "resample"), d_test
    )


def _bounds_for(config: ExperimentConfig, d_n, private_scores) -> OutcomeBounds:
    c_y = config.c_y if config.c_y is not None else float(np.max(np.abs(d_n.outcomes)))
    if config.trim_xi is not None:
        return OutcomeBounds(c_y, config.trim_xi, 1.0 - config.trim_xi)
    lo = float(np.clip(np.min(private_scores), 1e-300, 0.5))
    hi = float(np.clip(np.max(private_scores), 0.5, 1.0 - 1e-16))
    if not lo < hi:
        lo, hi = min(lo, 0.5 - 1e-9), max(hi, 0.5 + 1e-9)
    return OutcomeBounds(c_y, lo, hi)


def run_trial(
    config: ExperimentConfig, trial_index: int, epsilon: float | None = None, m: int | None = None
) -> TrialRecord:
    """One pass of the full pipeline; a pure function of its arguments."""
    epsilon = config.epsilon_grid[0] if epsilon is None else epsilon
    m = config.cells()[0][1] if m is None else m
    rec = TrialRecord(trial_index, float(epsilon), int(m))
    stage = "data"
    try:
        d_m, d_n = _pipeline_data(config, trial_index, m)
        rec.m = d_m.n_rows
        rec.n_estimate = d_n.n_rows
        budget = PrivacyBudget(epsilon, config.delta)
        scalar_budget = (
            PrivacyBudget(config.scalar_epsilon, config.delta) if config.scalar_epsilon else budget
        )

        stage = "train"
        opts = OptimizerSettings(config.lr, config.tol, config.max_iters, config.intercept)
        model = train(d_m, config.lam, opts)

        stage = "privatize_weights"
        pm = privatize_weights(
            model, budget, RngStream.for_trial(config.seed, trial_index, "weight_noise")
        )
        rec.sigma_m = pm.sigma

        stage = "estimate"
        tau_hat = estimate(d_n, model, "ATE", trim=config.trim_xi).value
        part = partially_private_ate(d_n, pm, trim=config.trim_xi)
        rec.tau_hat, rec.tau_n = tau_hat, part.value

        stage = "privatize_estimate"
        bounds = _bounds_for(config, d_n, pm.scores(d_n.covariates))
        rec.c_y = bounds.c_y
        full = fully_private_estimate(
            part, bounds, scalar_budget, RngStream.for_trial(config.seed, trial_index, "scalar_noise")
        )
        rec.tau_n_eps, rec.sigma_n = full.value, full.sigma_n

        stage = "theory"
        report = theory_report(
            d_n,
            model,
            budget,
            bounds,
            tau_hat,
            part.value,
            trim=config.trim_xi,
            gamma=config.gamma,
            markov_deltas=config.markov_deltas,
            convention=config.convention,
            scalar_budget=scalar_budget,
        )
        rec.theory = report.to_dict()
    except Exception as exc:  # recorded per trial, aggregated as a failure
        rec.error_stage, rec.error = stage, f"{type(exc).__name__}: {exc}"
        return rec

    rec.flip_n = _sign(rec.tau_n) != _sign(rec.tau_hat)
    rec.flip_n_eps = _sign(rec.tau_n_eps) != _sign(rec.tau_hat)
    rec.neg_n = rec.tau_n <= 0
    rec.neg_n_eps = rec.tau_n_eps <= 0
    rec.joint_neg = rec.neg_n and rec.neg_n_eps
    return rec


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

METRICS = (
    "trials_ok",
    "trials_failed",
    "mean_tau_hat",
    "ci95_tau_hat",
    "mean_tau_n",
    "ci95_tau_n",
    "mean_tau_n_eps",
    "ci95_tau_n_eps",
    "abs_gap_n",
    "abs_gap_n_eps",
    "rho_n",
    "rho_n_eps",
    "ci95_rho_n",
    "ci95_rho_n_eps",
    "joint_neg",
    "n_positive",
    "cond_neg_n",
    "cond_joint_neg",
    "se_cond_neg_n",
    "se_cond_joint_neg",
    "mean_thm1",
    "mean_thm2",
    "mean_g",
    "mean_abs_g",
    "mean_eta",
    "mean_sigma_m",
    "mean_sigma_n",
)


def _mean(v) -> float:
    return float(np.mean(v)) if len(v) else math.nan


def _ci95(v) -> float:
    if len(v) < 2:
        return math.nan
    return 1.96 * float(np.std(v, ddof=1)) / math.sqrt(len(v))


def _freq(flags) -> float:
    return float(np.mean(flags)) if len(flags) else math.nan


def _binom_se(p: float, k: int) -> float:
    return math.sqrt(p * (1.0 - p) / k) if k else math.nan


def summarize_cell(records: list[TrialRecord]) -> dict:
    ok = [r for r in sorted(records, key=lambda r: r.trial_index) if r.ok]
    tau_hat = [r.tau_hat for r in ok]
    tau_n = [r.tau_n for r in ok]
    tau_eps = [r.tau_n_eps for r in ok]
    pos = [r for r in ok if r.tau_hat > 0]
    cond_neg = _freq([r.neg_n for r in pos])
    cond_joint = _freq([r.joint_neg for r in pos])
    thm1 = [r.theory["thm1_bound"] for r in pos if r.theory["thm1_bound"] is not None]
    thm2 = [r.theory["thm2_bound"] for r in pos if r.theory["thm2_bound"] is not None]
    g = [r.theory["g"]["g_value"] for r in ok]
    rho_n = _freq([r.flip_n for r in ok])
    rho_eps = _freq([r.flip_n_eps for r in ok])
    out = {
        "trials_ok": len(ok),
        "trials_failed": len(records) - len(ok),
        "mean_tau_hat": _mean(tau_hat),
        "ci95_tau_hat": _ci95(tau_hat),
        "mean_tau_n": _mean(tau_n),
        "ci95_tau_n": _ci95(tau_n),
        "mean_tau_n_eps": _mean(tau_eps),
        "ci95_tau_n_eps": _ci95(tau_eps),
        "abs_gap_n": abs(_mean(tau_n) - _mean(tau_hat)),
        "abs_gap_n_eps": abs(_mean(tau_eps) - _mean(tau_hat)),
        "rho_n": rho_n,
        "rho_n_eps": rho_eps,
        "ci95_rho_n": 1.96 * _binom_se(rho_n, len(ok)),
        "ci95_rho_n_eps": 1.96 * _binom_se(rho_eps, len(ok)),
        "joint_neg": _freq([r.joint_neg for r in ok]),
        "n_positive": len(pos),
        "cond_neg_n": cond_neg,
        "cond_joint_neg": cond_joint,
        "se_cond_neg_n": _binom_se(cond_neg, len(pos)),
        "se_cond_joint_neg": _binom_se(cond_joint, len(pos)),
        "mean_thm1": _mean(thm1),
        "mean_thm2": _mean(thm2),
        "mean_g": _mean(g),
        "mean_abs_g": _mean(np.abs(g)),
        "mean_eta": _mean([r.theory["eta"]["eta"] for r in ok]),
        "mean_sigma_m": _mean([r.sigma_m for r in ok]),
        "mean_sigma_n": _mean([r.sigma_n for r in ok]),
    }
    assert tuple(out) == METRICS
    return out


@dataclass
class SweepReport:
    config: dict
    cells: list[dict]
    trials: list[dict] = field(default_factory=list)

    def cell(self, epsilon: float, m: int | None = None) -> dict:
        for c in self.cells:
            if c["epsilon"] == epsilon and (m is None or c["m"] == m):
                return c
        raise KeyError((epsilon, m))

    def to_dict(self) -> dict:
        return {"config": self.config, "cells": self.cells, "trials": self.trials}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        return cls(d["config"], d["cells"], d.get("trials", []))


def _run_task(args) -> TrialRecord:
    config, trial, eps, m = args
    return run_trial(config, trial, eps, m)


def run_sweep(
    config: ExperimentConfig, *, workers: int = 1, keep_trials: bool = True
) -> SweepReport:
    """Run every cell for ``config.trials`` trials and aggregate.

    With ``workers > 1`` trials run in a process pool; the report is
    identical to a serial run because records are merged by trial index.
    """
    tasks = [(config, k, eps, m) for eps, m in config.cells() for k in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        records = [_run_task(t) for t in tasks]

    cells = []
    trials_out = []
    per_cell = config.trials
    for c, (eps, m) in enumerate(config.cells()):
        recs = sorted(records[c * per_cell:(c + 1) * per_cell], key=lambda r: r.trial_index)
        summary = summarize_cell(recs)
        summary_m = recs[0].m if config.source == "csv" and recs[0].ok else m
        failed = summary["trials_failed"]
        cells.append(
            {
                "epsilon": float(eps),
                "m": int(summary_m),
                "degraded": failed > 0.1 * per_cell,
                **summary,
            }
        )
        if keep_trials:
            trials_out.extend(r.to_dict() for r in recs)
        if failed:
            stages = sorted({r.error_stage for r in recs if not r.ok})
            log.warning("cell eps=%s m=%s: %d failed trials (stages %s)", eps, m, failed, stages)
    return SweepReport(_clean(config.to_dict()), _clean(cells), _clean(trials_out))


def _clean(obj):
    """Replace NaN/inf with None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

CSV_COLUMNS = ("epsilon", "m", "metric", "value")


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".17g")


def report_csv(report: SweepReport) -> str:
    """Tidy long format: one row per (cell, metric), fixed column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        for metric in ("degraded", *METRICS):
            w.writerow([_fmt(c["epsilon"]), _fmt(c["m"]), metric, _fmt(c[metric])])
    return buf.getvalue()


def report_json(report: SweepReport) -> str:
    return json.dumps(report.to_dict(), indent=1, allow_nan=False) + "\n"


def emit(
    report: SweepReport, out_dir: str | Path, stem: str = "sweep", formats=("csv", "json")
) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        text = report_csv(report) if fmt == "csv" else report_json(report)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def run_experiment(config: ExperimentConfig, taus=None, **kw) -> dict[float | None, SweepReport]:
    """One sweep per effect size in ``taus`` (synthetic) or a single sweep."""
    if config.source == "csv" or taus is None:
        return {config.tau_true: run_sweep(config, **kw)}
    return {float(tau): run_sweep(replace(config, tau_true=float(tau)), **kw) for tau in taus}
