import os
import subprocess
import sys

import numpy as np
import pytest

from dp_ipw import _kernels

from conftest import make_dataset

needs_numba = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")


@needs_numba
@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lr", [1.0, 4.0])
def test_gd_parity(seed, lr):
    g = np.random.default_rng(seed)
    data = make_dataset(g, 80, 6)
    args = (data.covariates, data.treatments, np.zeros(6), 0.1, lr, 1e-10, 10_000)
    a = _kernels.numpy_impl.logistic_gd(*args)
    b = _kernels.numba_impl.logistic_gd(*args)
    assert a[1] == b[1] and a[4] == b[4] == _kernels.CONVERGED
    assert np.max(np.abs(a[0] - b[0])) <= 1e-12
    assert abs(a[3] - b[3]) <= 1e-12


@needs_numba
def test_gd_parity_non_finite():
    g = np.random.default_rng(1)
    data = make_dataset(g, 20, 3)
    args = (data.covariates, data.treatments, np.zeros(3), 0.1, 1e308, 1e-10, 100)
    assert _kernels.numpy_impl.logistic_gd(*args)[4] == _kernels.NON_FINITE
    assert _kernels.numba_impl.logistic_gd(*args)[4] == _kernels.NON_FINITE


@needs_numba
@pytest.mark.parametrize("trim", [0.0, 0.05])
def test_draws_parity(trim):
    g = np.random.default_rng(2)
    data = make_dataset(g, 9, 4)
    s = data.covariates @ g.standard_normal(4)
    z = 0.3 * g.standard_normal((5000, 4))
    a = _kernels.numpy_impl.partial_ate_draws(data.covariates, data.treatments, data.outcomes, s, z, trim)
    b = _kernels.numba_impl.partial_ate_draws(data.covariates, data.treatments, data.outcomes, s, z, trim)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_draws_match_estimator():
    from dp_ipw.estimators import ipw_ate, ipw_ate_trimmed
    from dp_ipw.propensity import sigmoid

    g = np.random.default_rng(3)
    data = make_dataset(g, 7, 3)
    w = g.standard_normal(3)
    z = 0.2 * g.standard_normal((3, 3))
    s = data.covariates @ w
    untrimmed = _kernels.partial_ate_draws(data.covariates, data.treatments, data.outcomes, s, z, 0.0)
    trimmed = _kernels.partial_ate_draws(data.covariates, data.treatments, data.outcomes, s, z, 0.1)
    for k in range(3):
        p = sigmoid(data.covariates @ (w + z[k]))
        assert untrimmed[k] == pytest.approx(ipw_ate(data, p).value, rel=1e-12)
        assert trimmed[k] == pytest.approx(ipw_ate_trimmed(data, p, 0.1).value, rel=1e-12)


def test_env_flag_selects_numpy():
    code = "from dp_ipw import BACKEND; print(BACKEND)"
    env = {**os.environ, "DP_IPW_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["DP_IPW_DISABLE_NUMBA"] = ""
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == ("numba" if _kernels.numba_impl is not None else "numpy")
