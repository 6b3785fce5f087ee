"""Inverse-probability-weighted ATE / ATT / ATC estimators.

Means are normalised by the full sample size ``n`` (Horvitz-Thompson form),
not by the arm sizes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from dp_ipw.core import Dataset, OutcomeBounds, PrivacyBudget
from dp_ipw.privacy import PrivateModel, privatize_scalar
from dp_ipw.propensity import PropensityModel, sigmoid
from dp_ipw.rng import RngStream
from dp_ipw.theory import sensitivity_tau

Estimand = Literal["ATE", "ATT", "ATC"]
Stage = Literal["non_private", "dp_wrt_Dm", "dp_wrt_all"]
ESTIMANDS = ("ATE", "ATT", "ATC")


class PositivityError(ValueError):
    """A propensity score of exactly 0 or 1 reached an untrimmed estimator."""


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str
    stage: str
    value: float
    mu1: float | None = None
    mu0: float | None = None
    n_used: int = 0
    trim_xi: float | None = None
    sigma_n: float | None = None

    def __post_init__(self) -> None:
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand {self.estimand!r}")
        if self.stage == "dp_wrt_all" and self.sigma_n is None:
            raise ValueError("a fully private estimate must record sigma_n")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_scores(data: Dataset, scores) -> np.ndarray:
    p = np.asarray(scores, dtype=np.float64).ravel()
    if p.size != data.n_rows:
        raise ValueError(f"got {p.size} scores for {data.n_rows} rows")
    return p


def ipw_ate(data: Dataset, scores, *, stage: Stage = "non_private") -> EffectEstimate:
    p = _check_scores(data, scores)
    if np.any((p <= 0.0) | (p >= 1.0)):
        bad = int(np.flatnonzero((p <= 0.0) | (p >= 1.0))[0])
        raise PositivityError(f"score at row {bad} is {p[bad]!r}; need 0 < score < 1")
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(y * t / np.where(t == 1.0, p, 1.0)) / n)
    mu0 = float(np.sum(y * (1.0 - t) / np.where(t == 0.0, 1.0 - p, 1.0)) / n)
    return EffectEstimate("ATE", stage, mu1 - mu0, mu1, mu0, n)


def ipw_ate_trimmed(
    data: Dataset, scores, xi: float, *, stage: Stage = "non_private"
) -> EffectEstimate:
    """ATE with denominators floored at ``xi``; bounded by ``2 C_y / xi``."""
    if not 0.0 < xi < 1.0:
        raise ValueError(f"trim level must lie in (0, 1), got {xi!r}")
    p = _check_scores(data, scores)
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(y * t / np.maximum(xi, p)) / n)
    mu0 = float(np.sum(y * (1.0 - t) / np.maximum(xi, 1.0 - p)) / n)
    return EffectEstimate("ATE", stage, mu1 - mu0, mu1, mu0, n, trim_xi=float(xi))


def _margins_and_stage(data: Dataset, model) -> tuple[np.ndarray, Stage]:
    if isinstance(model, PrivateModel):
        return model.margins(data.covariates), "dp_wrt_Dm"
    if isinstance(model, PropensityModel):
        return model.margins(data.covariates), "non_private"
    w = np.asarray(model, dtype=np.float64).ravel()
    if w.size != data.dim:
        raise ValueError(f"dimension mismatch: weights {w.size}, covariates {data.dim}")
    return data.covariates @ w, "non_private"


def ipw_att(data: Dataset, model, xi_exp: float | None = None) -> EffectEstimate:
    """ATT via odds weights ``exp(w.x)`` on controls.

    With ``xi_exp`` set, the odds are clamped at that constant.
    """
    s, stage = _margins_and_stage(data, model)
    odds = np.exp(s)
    if xi_exp is not None:
        odds = np.minimum(odds, xi_exp)
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(t * y) / n)
    mu0 = float(np.sum((1.0 - t) * odds * y) / n)
    return EffectEstimate("ATT", stage, mu1 - mu0, mu1, mu0, n, trim_xi=xi_exp)


def ipw_atc(data: Dataset, model, xi_exp: float | None = None) -> EffectEstimate:
    """ATC via inverse odds ``exp(-w.x)`` on treated units."""
    s, stage = _margins_and_stage(data, model)
    inv_odds = np.exp(-s)
    if xi_exp is not None:
        inv_odds = np.minimum(inv_odds, xi_exp)
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(t * inv_odds * y) / n)
    mu0 = float(np.sum((1.0 - t) * y) / n)
    return EffectEstimate("ATC", stage, mu1 - mu0, mu1, mu0, n, trim_xi=xi_exp)


def ipw_att_scores(data: Dataset, scores) -> EffectEstimate:
    """ATT written with ``pi / (1 - pi)``; works for any score model."""
    p = _check_scores(data, scores)
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(t * y) / n)
    mu0 = float(np.sum((1.0 - t) * p / (1.0 - p) * y) / n)
    return EffectEstimate("ATT", "non_private", mu1 - mu0, mu1, mu0, n)


def ipw_atc_scores(data: Dataset, scores) -> EffectEstimate:
    p = _check_scores(data, scores)
    t, y, n = data.treatments, data.outcomes, data.n_rows
    mu1 = float(np.sum(t * (1.0 - p) / p * y) / n)
    mu0 = float(np.sum((1.0 - t) * y) / n)
    return EffectEstimate("ATC", "non_private", mu1 - mu0, mu1, mu0, n)


def estimate(
    data: Dataset,
    model,
    estimand: Estimand = "ATE",
    *,
    trim: float | None = None,
    xi_exp: float | None = None,
) -> EffectEstimate:
    """Dispatch on estimand; the stage follows from the model type."""
    if estimand == "ATE":
        s, stage = _margins_and_stage(data, model)
        scores = sigmoid(s)
        if trim is None:
            return ipw_ate(data, scores, stage=stage)
        return ipw_ate_trimmed(data, scores, trim, stage=stage)
    if estimand == "ATT":
        return ipw_att(data, model, xi_exp)
    if estimand == "ATC":
        return ipw_atc(data, model, xi_exp)
    raise ValueError(f"unknown estimand {estimand!r}")


def partially_private_ate(
    d_n: Dataset, pm: PrivateModel, trim: float | None = None
) -> EffectEstimate:
    """ATE on the estimation split using scores from the noisy weights."""
    if not isinstance(pm, PrivateModel):
        raise TypeError("partially_private_ate needs a PrivateModel")
    return estimate(d_n, pm, "ATE", trim=trim)


def fully_private_estimate(
    est: EffectEstimate,
    bounds: OutcomeBounds,
    budget: PrivacyBudget,
    stream: RngStream,
) -> EffectEstimate:
    """Add Gaussian output noise calibrated to the estimator's sensitivity."""
    if est.stage != "dp_wrt_Dm":
        raise ValueError(f"expected a partially private estimate, got stage {est.stage!r}")
    s = sensitivity_tau(bounds, est.n_used, est.estimand)
    value, sigma_n = privatize_scalar(est.value, s, budget, stream)
    return EffectEstimate(
        est.estimand,
        "dp_wrt_all",
        value,
        None,
        None,
        est.n_used,
        est.trim_xi,
        sigma_n,
    )
