"""``dp-ipw`` command line: synth, fit, privatize, estimate, bound, experiment.

Settings are resolved as command-line flag, then ``--config`` JSON file,
then built-in default. Failures exit with status 1 and a message of the form
``dp-ipw <command>: error [<stage>]: <reason>``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dp_ipw.core import OutcomeBounds, PrivacyBudget, split_dataset
from dp_ipw.estimators import ESTIMANDS, estimate, fully_private_estimate
from dp_ipw.harness import ExperimentConfig, emit, run_experiment
from dp_ipw.ingest import CsvSchema, load_csv, normalize_unit_ball, write_csv
from dp_ipw.privacy import PrivateModel, privatize_weights
from dp_ipw.propensity import OptimizerSettings, PropensityModel, train
from dp_ipw.rng import RngStream
from dp_ipw.synthgen import SynthConfig, generate_full
from dp_ipw.theory import theory_report

log = logging.getLogger("dp_ipw")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# --------------------------------------------------------------------------
# settings
# --------------------------------------------------------------------------

# flag dest -> ExperimentConfig field
_SHARED = {
    "seed": "seed",
    "lam": "lam",
    "lr": "lr",
    "tol": "tol",
    "max_iters": "max_iters",
    "delta": "delta",
    "intercept": "intercept",
}


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with stage("config"):
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        return ExperimentConfig.from_dict(raw)


def _settings(args) -> ExperimentConfig:
    """Config file values overridden by any flag that was given."""
    cfg = _load_config(args.config)
    overrides = {
        field: getattr(args, dest)
        for dest, field in _SHARED.items()
        if getattr(args, dest, None) is not None
    }
    with stage("config"):
        return replace(cfg, **overrides)


def _lr(value: str):
    return value if value == "auto" else float(value)


def _optimizer(cfg: ExperimentConfig) -> OptimizerSettings:
    return OptimizerSettings(cfg.lr, cfg.tol, cfg.max_iters, cfg.intercept)


def _budget(args, cfg: ExperimentConfig) -> PrivacyBudget:
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon_grid[0]
    with stage("budget"):
        return PrivacyBudget(eps, cfg.delta)


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    with stage("write"):
        out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> Path:
    with stage("write"):
        path.write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    log.info("wrote %s", path)
    print(path)
    return path


def _read_json(path: str, what: str) -> dict:
    with stage(f"load_{what}"):
        return json.loads(Path(path).read_text(encoding="utf-8"))


def _schema(args) -> CsvSchema:
    return CsvSchema(args.treatment_column, args.outcome_column, tuple(args.covariates or ()))


def _load_data(args):
    with stage("load_data"):
        data, factor = normalize_unit_ball(load_csv(args.data, _schema(args)))
    log.info("loaded %d rows, d=%d, normalisation factor %.6g", data.n_rows, data.dim, factor)
    if getattr(args, "split", None):
        split = _read_json(args.split, "split")
        with stage("load_split"):
            data = data.subset(np.asarray(split[args.part], dtype=np.intp))
    return data


def _load_model(path: str):
    d = _read_json(path, "model")
    with stage("load_model"):
        return PrivateModel.from_dict(d) if "mechanism" in d else PropensityModel.from_dict(d)


def _trim(args) -> float | None:
    return None if args.no_trim else args.trim


def _bounds(args, data, scores) -> OutcomeBounds:
    c_y = args.c_y if args.c_y is not None else float(np.max(np.abs(data.outcomes)))
    trim = _trim(args)
    if trim is not None:
        return OutcomeBounds(c_y, trim, 1.0 - trim, args.xi_exp or 1.0)
    return OutcomeBounds(c_y, float(np.min(scores)), float(np.max(scores)), args.xi_exp or 1.0)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _settings(args)
    with stage("synth"):
        synth = SynthConfig(
            n_units=args.n_units,
            d=args.d,
            tau_true=args.tau,
            cov_scale=args.cov_scale,
            noise_var=args.noise_var,
            seed=cfg.seed,
        )
        draw = generate_full(synth, RngStream(cfg.seed, 0).child("synth"))
    out = _out_dir(args)
    csv_path = out / f"{args.name}.csv"
    with stage("write"):
        write_csv(csv_path, draw.data)
    print(csv_path)
    _write_json(
        out / f"{args.name}.json",
        {
            "ground_truth": draw.ground_truth,
            "config": synth.to_dict(),
            "treat_coef": draw.treat_coef.tolist(),
            "outcome_coef": draw.outcome_coef.tolist(),
            "scale_factor": draw.scale_factor,
        },
    )
    return 0


def cmd_fit(args) -> int:
    cfg = _settings(args)
    data = _load_data(args)
    out = _out_dir(args)
    if args.m is not None:
        with stage("split"):
            d_m, _, split = split_dataset(data, args.m, RngStream(cfg.seed, 0).child("split"))
        _write_json(
            out / f"{args.name}_split.json",
            {
                "fit": split.fit_indices.tolist(),
                "estimate": split.estimate_indices.tolist(),
                "seed": cfg.seed,
            },
        )
        data = d_m
    with stage("train"):
        model = train(data, cfg.lam, _optimizer(cfg))
    if not model.converged:
        log.warning("optimizer stopped after %d iterations without converging", model.n_iter)
    _write_json(out / f"{args.name}.json", model.to_dict())
    return 0


def cmd_privatize(args) -> int:
    cfg = _settings(args)
    budget = _budget(args, cfg)
    model = _load_model(args.model)
    if isinstance(model, PrivateModel):
        raise StageError("load_model", "model is already private")
    with stage("privatize"):
        pm = privatize_weights(model, budget, RngStream(cfg.seed, 0).child("weight_noise"))
    _write_json(Path(_out_dir(args)) / f"{args.name}.json", pm.to_dict())
    return 0


def cmd_estimate(args) -> int:
    cfg = _settings(args)
    data = _load_data(args)
    model = _load_model(args.model)
    with stage("estimate"):
        est = estimate(data, model, args.estimand, trim=_trim(args), xi_exp=args.xi_exp)
    if args.private_output:
        if not isinstance(model, PrivateModel):
            raise StageError("privatize_estimate", "--private-output needs a private model")
        budget = _budget(args, cfg)
        with stage("privatize_estimate"):
            bounds = _bounds(args, data, model.scores(data.covariates))
            est = fully_private_estimate(
                est, bounds, budget, RngStream(cfg.seed, 0).child("scalar_noise")
            )
    _write_json(_out_dir(args) / f"{args.name}.json", est.to_dict())
    return 0


def cmd_bound(args) -> int:
    cfg = _settings(args)
    budget = _budget(args, cfg)
    data = _load_data(args)
    model = _load_model(args.model)
    if isinstance(model, PrivateModel):
        raise StageError("load_model", "bounds need the non-private model")
    trim = _trim(args)
    with stage("estimate"):
        tau_hat = estimate(data, model, args.estimand, trim=trim, xi_exp=args.xi_exp).value
    with stage("bound"):
        report = theory_report(
            data,
            model,
            budget,
            _bounds(args, data, model.scores(data.covariates)),
            tau_hat,
            args.tau_n,
            m=args.m,
            estimand=args.estimand,
            trim=trim if args.estimand == "ATE" else None,
            gamma=args.gamma,
            convention=args.convention,
        )
    _write_json(_out_dir(args) / f"{args.name}.json", report.to_dict())
    return 0


def cmd_experiment(args) -> int:
    cfg = _settings(args)
    with stage("config"):
        if args.epsilon is not None:
            cfg = replace(cfg, epsilon_grid=tuple(args.epsilon))
        if args.m_grid is not None:
            cfg = replace(cfg, m_grid=tuple(args.m_grid))
        if args.trials is not None:
            cfg = replace(cfg, trials=args.trials)
        if args.no_trim:
            cfg = replace(cfg, trim_xi=None)
    taus = args.taus if cfg.source == "synthetic" else None
    with stage("experiment"):
        reports = run_experiment(cfg, taus, workers=args.workers, keep_trials=not args.no_trials)
    out = _out_dir(args)
    for tau, report in reports.items():
        stem = "sweep" if tau is None or taus is None else f"sweep_tau={tau:g}"
        with stage("write"):
            for path in emit(report, out, stem):
                print(path)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, *, data: bool = False, optimizer: bool = False) -> None:
    p.add_argument("--config", help="JSON file with experiment settings")
    p.add_argument("--seed", type=int, help="master seed (default 1)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("-v", "--verbose", action="store_true")
    if optimizer:
        p.add_argument("--lambda", dest="lam", type=float, help="L2 penalty (default 0.1)")
        p.add_argument("--lr", type=_lr, help="step size or 'auto'")
        p.add_argument("--tol", type=float, help="gradient-norm tolerance")
        p.add_argument("--max-iters", type=int)
        p.add_argument("--intercept", action="store_true", default=None)
    if data:
        p.add_argument("--data", required=True, help="CSV with treatment, outcome, covariates")
        p.add_argument("--treatment-column", default="t")
        p.add_argument("--outcome-column", default="y")
        p.add_argument("--covariates", nargs="+", help="covariate columns (default: the rest)")


def _privacy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, help="privacy loss in (0, 1)")
    p.add_argument("--delta", type=float, help="failure probability (default 1e-6)")


def _estimation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True)
    p.add_argument("--split", help="split file from 'fit --m'; selects the estimation rows")
    p.add_argument("--part", default="estimate", choices=("fit", "estimate"))
    p.add_argument("--estimand", default="ATE", choices=ESTIMANDS)
    p.add_argument("--trim", type=float, default=0.05, help="score floor xi (default 0.05)")
    p.add_argument("--no-trim", action="store_true")
    p.add_argument("--xi-exp", type=float, help="clamp for exp(+-w.x) in ATT/ATC")
    p.add_argument("--c-y", type=float, help="outcome bound (default max |y|)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dp-ipw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--n-units", type=int, default=2000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--cov-scale", type=float, default=9.0)
    p.add_argument("--noise-var", type=float, default=0.01)
    p.add_argument("--name", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="train the propensity model")
    _common(p, data=True, optimizer=True)
    p.add_argument("--m", type=int, help="fit on a random m-row part and save the split")
    p.add_argument("--name", default="model")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("privatize", help="release model weights with Gaussian noise")
    _common(p)
    _privacy(p)
    p.add_argument("--model", required=True)
    p.add_argument("--name", default="private_model")
    p.set_defaults(func=cmd_privatize)

    p = sub.add_parser("estimate", help="IPW estimate from a model")
    _common(p, data=True)
    _privacy(p)
    _estimation(p)
    p.add_argument("--private-output", action="store_true", help="also add output noise")
    p.add_argument("--name", default="estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bound", help="bias and sign-flip bounds for a model")
    _common(p, data=True)
    _privacy(p)
    _estimation(p)
    p.add_argument("--m", type=int, help="training size for the noise scale (default: model's)")
    p.add_argument("--tau-n", type=float, help="observed partially private estimate")
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--convention", default="appendix_proof", choices=("appendix_proof", "main_text"))
    p.add_argument("--name", default="theory")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("experiment", help="Monte-Carlo sweep over (epsilon, m)")
    _common(p, optimizer=True)
    p.add_argument("--epsilon", type=float, nargs="+", help="epsilon grid")
    p.add_argument("--delta", type=float)
    p.add_argument("--m-grid", type=int, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--taus", type=float, nargs="+", default=[0.1, 2.0])
    p.add_argument("--no-trim", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-trials", action="store_true", help="omit per-trial records from JSON")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StageError as exc:
        print(f"dp-ipw {args.command}: error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
