"""Differentially private propensity scores and IPW treatment-effect estimates."""

from dp_ipw._kernels import BACKEND
from dp_ipw.core import (
    BudgetError,
    Dataset,
    OutcomeBounds,
    PrivacyBudget,
    Split,
    UnitBallError,
    recombine,
    split_dataset,
    validate_unit_ball,
)
from dp_ipw.estimators import (
    EffectEstimate,
    PositivityError,
    estimate,
    fully_private_estimate,
    ipw_ate,
    ipw_ate_trimmed,
    ipw_atc,
    ipw_att,
    partially_private_ate,
)
from dp_ipw.privacy import (
    GaussianMechanism,
    PrivateModel,
    calibrate,
    privatize_scalar,
    privatize_weights,
)
from dp_ipw.propensity import (
    OptimizerSettings,
    PropensityModel,
    erm_sensitivity,
    loss,
    sigmoid_score,
    train,
)
from dp_ipw.rng import RngStream

__version__ = "0.1.0"
