"""Closed-form bias, sensitivity, support and sign-flip bounds.

The bias term ``g`` measures how weight noise shifts the expected
partially private estimate away from the non-private one. With
``z ~ N(0, sigma^2 I)`` each log-normal factor ``exp(+-z.x)`` has mean
``exp(sigma^2 ||x||^2 / 2)``, which gives

    g = (1/n) sum_i alpha_i (beta_i - 1),
    alpha_i = y_i exp(-w.x_i)   (treated)
            = -y_i exp(w.x_i)   (controls),
    beta_i  = exp(sigma^2 ||x_i||^2 / 2).

A variant with an extra ``(-1)^{t_i}`` in the exponent of ``beta_i`` is
available as ``convention="main_text"``. The Gaussian moment generating
function is symmetric, so ``"appendix_proof"`` (no sign flip) is the default.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from dp_ipw.core import Dataset, OutcomeBounds, PrivacyBudget
from dp_ipw.privacy import calibrate
from dp_ipw.propensity import PropensityModel, erm_sensitivity

Convention = Literal["appendix_proof", "main_text"]


class PreconditionError(ValueError):
    """A bound was requested outside the assumptions it is derived under."""


@dataclass(frozen=True, eq=False)
class BiasReport:
    g_value: float
    per_unit_terms: np.ndarray
    sign_convention: str
    sigma: float

    def to_dict(self) -> dict:
        return {
            "g_value": self.g_value,
            "sign_convention": self.sign_convention,
            "sigma": self.sigma,
        }


@dataclass(frozen=True)
class SupportBound:
    eta: float
    kind: str
    gamma: float = 0.0
    zeta: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TheoryReport:
    estimand: str
    tau_hat: float
    tau_n: float | None
    g: BiasReport
    eta: SupportBound
    sensitivity_tau: float
    sigma_n: float
    thm1_bound: float | None
    thm2_bound: float | None
    flip_given_negative: float | None
    thm1_raw: float | None = None
    thm2_raw: float | None = None
    markov_bound: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["g"] = self.g.to_dict()
        d["eta"] = self.eta.to_dict()
        d["markov_bound"] = [[a, b] for a, b in self.markov_bound]
        return d


def _base_model(model) -> PropensityModel:
    return getattr(model, "base", model)


def _bias(
    d_n: Dataset,
    model,
    budget: PrivacyBudget,
    m: int | None,
    convention: Convention,
    alpha_fn,
) -> BiasReport:
    if convention not in ("appendix_proof", "main_text"):
        raise ValueError(f"unknown sign convention {convention!r}")
    model = _base_model(model)
    m = model.m_train if m is None else int(m)
    sigma = calibrate(erm_sensitivity(m, model.lam), budget).sigma
    x = model.design(d_n.covariates)
    s = x @ model.weights
    t, y = d_n.treatments, d_n.outcomes
    q = 0.5 * sigma**2 * np.einsum("ij,ij->i", x, x)
    if convention == "main_text":
        q = np.where(t == 1.0, -q, q)
    alpha = alpha_fn(t, y, s)
    terms = alpha * np.expm1(q) / d_n.n_rows
    return BiasReport(float(np.sum(terms)), terms, convention, float(sigma))


def _alpha_ate(t, y, s):
    # alpha_i = (-1)^(1 - t_i) y_i exp((-1)^t_i w.x_i)
    return np.where(t == 1.0, y * np.exp(-s), -y * np.exp(s))


def _alpha_att(t, y, s):
    return np.where(t == 0.0, -y * np.exp(s), 0.0)


def _alpha_atc(t, y, s):
    return np.where(t == 1.0, y * np.exp(-s), 0.0)


def bias_g(
    d_n: Dataset,
    model,
    budget: PrivacyBudget,
    m: int | None = None,
    convention: Convention = "appendix_proof",
) -> BiasReport:
    """Expected shift of the partially private ATE, ``E[tau_n] - tau_hat``.

    ``model`` carries the non-private weights; ``m`` defaults to its
    training size.
    """
    return _bias(d_n, model, budget, m, convention, _alpha_ate)


def bias_g_att(d_n, model, budget, m=None, convention: Convention = "appendix_proof"):
    return _bias(d_n, model, budget, m, convention, _alpha_att)


def bias_g_atc(d_n, model, budget, m=None, convention: Convention = "appendix_proof"):
    return _bias(d_n, model, budget, m, convention, _alpha_atc)


BIAS_FUNCTIONS = {"ATE": bias_g, "ATT": bias_g_att, "ATC": bias_g_atc}


def lemma1_expectation(tau_hat: float, g: BiasReport | float) -> float:
    return float(tau_hat) + float(getattr(g, "g_value", g))


def eta_deterministic(bounds: OutcomeBounds, xi: float) -> SupportBound:
    """Support bound ``2 C_y / xi`` of the trimmed estimator."""
    if not 0.0 < xi < 1.0:
        raise ValueError(f"xi must lie in (0, 1), got {xi!r}")
    return SupportBound(2.0 * bounds.c_y / xi, "deterministic_trim", 0.0, None)


def chernoff_zeta(sigma: float, d: int, gamma: float) -> float:
    """Radius with ``P(|sum z_j| >= zeta) <= gamma`` for ``z ~ N(0, sigma^2 I_d)``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    return sigma * math.sqrt(2.0 * d * math.log(2.0 / gamma))


def eta_probabilistic(
    d_n: Dataset, model, sigma_m: float, gamma: float
) -> SupportBound:
    """Bounded-difference radius of the untrimmed estimator, valid w.p. ``1 - gamma``.

    Uses ``|y_i|`` in the per-unit constants so the radius is non-negative
    for outcomes of either sign.
    """
    model = _base_model(model)
    d = model.weights.size
    zeta = chernoff_zeta(sigma_m, d, gamma)
    s = model.margins(d_n.covariates)
    t, ay = d_n.treatments, np.abs(d_n.outcomes)
    c = np.where(t == 1.0, ay * np.exp(-s), ay * np.exp(s))
    eta = 2.0 / d_n.n_rows * math.sinh(zeta) * float(np.sum(c))
    return SupportBound(eta, "probabilistic", float(gamma), zeta)


def sensitivity_tau(bounds: OutcomeBounds, n: int, estimand: str = "ATE") -> float:
    """L2-sensitivity bound of the estimate computed on ``n`` units."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if estimand == "ATE":
        factor = max(1.0 / bounds.omega_lo, 1.0 / (1.0 - bounds.omega_hi))
    elif estimand in ("ATT", "ATC"):
        factor = max(1.0, bounds.xi_exp)
    else:
        raise ValueError(f"unknown estimand {estimand!r}")
    return 2.0 * bounds.c_y / n * factor


def _thm1_raw(tau_hat: float, g: float, eta: float) -> float:
    if not tau_hat > 0.0:
        raise PreconditionError(f"the sign-flip bound assumes tau_hat > 0, got {tau_hat!r}")
    if not eta > 0.0:
        raise PreconditionError(f"eta must be positive, got {eta!r}")
    r = (tau_hat + g) / eta
    return math.exp(-2.0 * r * r)


def thm1_bound(tau_hat: float, g: float, eta: float) -> float:
    """Bound on ``P(tau_n <= 0 | tau_hat > 0)``.

    Returns 1 when ``tau_hat + g <= 0``: the concentration argument only
    controls the lower tail when the mean of ``tau_n`` is positive.
    """
    raw = _thm1_raw(tau_hat, g, eta)
    if tau_hat + g <= 0.0:
        return 1.0
    return min(1.0, raw)


def flip_given_negative(tau_n: float, sigma_n: float) -> float:
    """``Phi(|tau_n| / sigma_n)``: chance the output noise keeps a negative sign."""
    if not sigma_n > 0.0:
        raise ValueError(f"sigma_n must be positive, got {sigma_n!r}")
    if math.isinf(sigma_n):
        return 0.5
    return 0.5 * (1.0 + math.erf(abs(tau_n) / (sigma_n * math.sqrt(2.0))))


def thm2_bound(tau_hat: float, g: float, eta: float, tau_n: float, sigma_n: float) -> float:
    """Bound on ``P(tau_n_eps <= 0, tau_n <= 0 | tau_hat > 0)``."""
    return min(1.0, thm1_bound(tau_hat, g, eta) * flip_given_negative(tau_n, sigma_n))


def thm_att_atc_bounds(
    tau_hat: float,
    g: float,
    eta: float,
    tau_n: float | None = None,
    sigma_n: float | None = None,
) -> float:
    """ATT/ATC versions: same forms with the estimand's own ``tau_hat``, ``g``.

    Without ``tau_n`` this is the partial-privacy bound, otherwise the joint one.
    """
    if tau_n is None:
        return thm1_bound(tau_hat, g, eta)
    return thm2_bound(tau_hat, g, eta, tau_n, sigma_n)


def markov_error_bound(g: float, delta_threshold: float) -> float:
    """``P(|tau_n - tau_hat| >= delta) <= |g| / delta``, clamped to 1."""
    if not delta_threshold > 0.0:
        raise ValueError(f"threshold must be positive, got {delta_threshold!r}")
    return min(1.0, abs(g) / delta_threshold)


def theory_report(
    d_n: Dataset,
    model,
    budget: PrivacyBudget,
    bounds: OutcomeBounds,
    tau_hat: float,
    tau_n: float | None = None,
    *,
    m: int | None = None,
    estimand: str = "ATE",
    trim: float | None = None,
    gamma: float = 0.05,
    markov_deltas=(0.1, 0.5, 1.0),
    convention: Convention = "appendix_proof",
    scalar_budget: PrivacyBudget | None = None,
) -> TheoryReport:
    """Evaluate every bound for one configuration.

    ``trim`` selects the deterministic support bound; without it the
    probabilistic one is used and its failure probability ``gamma`` is
    reported next to the bounds rather than folded into them.
    """
    g = BIAS_FUNCTIONS[estimand](d_n, model, budget, m, convention)
    if trim is not None:
        eta = eta_deterministic(bounds, trim)
    else:
        eta = eta_probabilistic(d_n, model, g.sigma, gamma)
    sens = sensitivity_tau(bounds, d_n.n_rows, estimand)
    sigma_n = calibrate(sens, scalar_budget or budget).sigma

    thm1 = thm2 = flip = thm1_raw = thm2_raw = None
    if tau_n is not None and sigma_n > 0.0:
        flip = flip_given_negative(tau_n, sigma_n)
    if tau_hat > 0.0 and eta.eta > 0.0:
        thm1_raw = _thm1_raw(tau_hat, g.g_value, eta.eta)
        thm1 = thm1_bound(tau_hat, g.g_value, eta.eta)
        if flip is not None:
            thm2_raw = thm1_raw * flip
            thm2 = min(1.0, thm1 * flip)
    markov = [(float(dl), markov_error_bound(g.g_value, dl)) for dl in markov_deltas]
    return TheoryReport(
        estimand=estimand,
        tau_hat=float(tau_hat),
        tau_n=None if tau_n is None else float(tau_n),
        g=g,
        eta=eta,
        sensitivity_tau=sens,
        sigma_n=sigma_n,
        thm1_bound=thm1,
        thm2_bound=thm2,
        flip_given_negative=flip,
        thm1_raw=thm1_raw,
        thm2_raw=thm2_raw,
        markov_bound=markov,
    )
