"""Gaussian mechanism: noise calibration and release.

The noise here comes from numpy's PCG64 and is meant for studying utility,
not for a hardened production release.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dp_ipw.core import BudgetError, PrivacyBudget
from dp_ipw.propensity import PropensityModel, erm_sensitivity
from dp_ipw.rng import RngStream, standard_normal_vector


def noise_multiplier(budget: PrivacyBudget) -> float:
    """``sqrt(2 ln(1.25/delta)) / epsilon``: sigma per unit of sensitivity."""
    return math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


@dataclass(frozen=True)
class GaussianMechanism:
    sensitivity: float
    budget: PrivacyBudget
    sigma: float

    def to_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "sigma": self.sigma,
        }


def calibrate(sensitivity: float, budget: PrivacyBudget) -> GaussianMechanism:
    """Smallest sigma the Gaussian mechanism allows for this budget."""
    if not isinstance(budget, PrivacyBudget):
        budget = PrivacyBudget(*budget)
    if not sensitivity >= 0.0:
        raise ValueError(f"sensitivity must be non-negative, got {sensitivity!r}")
    return GaussianMechanism(float(sensitivity), budget, sensitivity * noise_multiplier(budget))


@dataclass(frozen=True, eq=False)
class PrivateModel:
    """A propensity model whose weights have been released with Gaussian noise.

    ``noise`` is kept only when requested for diagnostics and is never
    written by :meth:`to_dict` unless asked for explicitly.
    """

    base: PropensityModel
    noisy_weights: np.ndarray
    mechanism: GaussianMechanism
    noise: np.ndarray | None = None

    def __post_init__(self) -> None:
        w = np.array(self.noisy_weights, dtype=np.float64, copy=True).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "noisy_weights", w)

    @property
    def sigma(self) -> float:
        return self.mechanism.sigma

    def margins(self, x) -> np.ndarray:
        return self.base.margins(x, self.noisy_weights)

    def scores(self, x) -> np.ndarray:
        return self.base.scores(x, self.noisy_weights)

    def to_dict(self, include_noise: bool = False) -> dict:
        d = {
            "weights": [float(v) for v in self.noisy_weights],
            "intercept": bool(self.base.intercept),
            "lambda": float(self.base.lam),
            "m_train": int(self.base.m_train),
            "mechanism": self.mechanism.to_dict(),
        }
        if include_noise and self.noise is not None:
            d["noise"] = [float(v) for v in self.noise]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PrivateModel":
        """Rebuild a released model.

        The non-private weights are not part of a release, so the base model
        carries the noisy ones; use it for scoring only.
        """
        mech = d["mechanism"]
        budget = PrivacyBudget(mech["epsilon"], mech["delta"])
        weights = np.asarray(d["weights"], dtype=np.float64)
        base = PropensityModel(
            weights=weights,
            lam=float(d["lambda"]),
            m_train=int(d["m_train"]),
            converged=True,
            final_loss=float("nan"),
            intercept=bool(d.get("intercept", False)),
        )
        return cls(base, weights, GaussianMechanism(mech["sensitivity"], budget, mech["sigma"]))


def privatize_weights(
    model: PropensityModel,
    budget: PrivacyBudget,
    stream: RngStream,
    *,
    keep_noise: bool = False,
    sensitivity: float | None = None,
) -> PrivateModel:
    """Release ``w + z`` with ``z ~ N(0, sigma_m^2 I)``.

    ``sigma_m`` is calibrated from ``2 / (m * lambda)`` unless an explicit
    ``sensitivity`` is passed.
    """
    s = erm_sensitivity(model.m_train, model.lam) if sensitivity is None else sensitivity
    mech = calibrate(s, budget)
    z = mech.sigma * standard_normal_vector(stream, model.weights.size)
    return PrivateModel(
        base=model,
        noisy_weights=model.weights + z,
        mechanism=mech,
        noise=z if keep_noise else None,
    )


def privatize_scalar(
    value: float, sensitivity: float, budget: PrivacyBudget, stream: RngStream
) -> tuple[float, float]:
    """Return ``(value + e, sigma)`` with ``e ~ N(0, sigma^2)``."""
    mech = calibrate(sensitivity, budget)
    e = mech.sigma * standard_normal_vector(stream, 1)[0]
    return float(value + e), mech.sigma


__all__ = [
    "BudgetError",
    "GaussianMechanism",
    "PrivateModel",
    "calibrate",
    "noise_multiplier",
    "privatize_scalar",
    "privatize_weights",
]
