"""Synthetic confounded data with a known constant treatment effect.

For each draw::

    x_i ~ N(0, cov_scale * I_d), rescaled by the largest row norm in the set
    t_i ~ Bernoulli(sigmoid(a . x_i)),   a ~ N(0, I_d)
    y_i = b . x_i + t_i * tau + noise,   b ~ N(0, I_d), noise ~ N(0, noise_var)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from dp_ipw.core import Dataset
from dp_ipw.propensity import sigmoid
from dp_ipw.rng import RngStream


@dataclass(frozen=True)
class SynthConfig:
    n_units: int = 2000
    d: int = 50
    tau_true: float = 2.0
    cov_scale: float = 9.0
    noise_var: float = 0.01
    seed: int = 1
    #: reuse the same (a, b) for every trial instead of redrawing them
    freeze_coefficients: bool = False

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.n_units < 2:
            raise ValueError(f"n_units must be >= 2, got {self.n_units}")
        if not self.cov_scale > 0:
            raise ValueError(f"cov_scale must be positive, got {self.cov_scale}")
        if not self.noise_var >= 0:
            raise ValueError(f"noise_var must be non-negative, got {self.noise_var}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthDraw:
    data: Dataset
    ground_truth: float
    treat_coef: np.ndarray
    outcome_coef: np.ndarray
    scale_factor: float


def generate_full(
    config: SynthConfig,
    stream: RngStream,
    *,
    treat_coef: np.ndarray | None = None,
    outcome_coef: np.ndarray | None = None,
) -> SynthDraw:
    """Generate one dataset; explicit coefficients override the random ones."""
    gen = stream.generator()
    coef_gen = (
        RngStream(config.seed, 0).child("frozen-coefficients").generator()
        if config.freeze_coefficients
        else gen
    )
    a = coef_gen.standard_normal(config.d)
    b = coef_gen.standard_normal(config.d)
    if treat_coef is not None:
        a = np.asarray(treat_coef, dtype=np.float64)
    if outcome_coef is not None:
        b = np.asarray(outcome_coef, dtype=np.float64)
    x = np.sqrt(config.cov_scale) * gen.standard_normal((config.n_units, config.d))
    scale = float(np.max(np.linalg.norm(x, axis=1)))
    if scale > 0:
        x = x / scale
    u = gen.random(config.n_units)
    t = (u < sigmoid(x @ a)).astype(np.float64)
    noise = np.sqrt(config.noise_var) * gen.standard_normal(config.n_units)
    y = x @ b + t * config.tau_true + noise
    return SynthDraw(Dataset(x, t, y), float(config.tau_true), a, b, scale)


def generate(config: SynthConfig, stream: RngStream | None = None) -> tuple[Dataset, float]:
    """Return ``(dataset, tau_true)``."""
    stream = stream or RngStream(config.seed, 0)
    draw = generate_full(config, stream)
    return draw.data, draw.ground_truth
