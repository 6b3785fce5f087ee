"""Hot numeric loops, compiled with numba when available.

Each kernel has a pure-numpy twin. Set ``DP_IPW_DISABLE_NUMBA=1`` to force
the numpy path (also used automatically when numba fails to import). Both
paths are exposed as ``numpy_impl`` / ``numba_impl`` for tests and the
benchmark; callers use the module-level names, which point at the active
backend.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

#: Clamp used inside the cross-entropy only; returned scores are unclamped.
LOG_CLAMP = 1e-15

# status codes for logistic_gd
CONVERGED = 0
MAX_ITERS = 1
NON_FINITE = 2

_DISABLE = os.environ.get("DP_IPW_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------


def _np_sigmoid(s):
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _np_loss_from_margins(s, t, w, lam):
    p = np.clip(_np_sigmoid(s), LOG_CLAMP, 1.0 - LOG_CLAMP)
    ce = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return ce + 0.5 * lam * float(w @ w)


def _np_logistic_gd(X, t, w0, lam, lr, tol, max_iters):
    # divergence is reported through the NON_FINITE status, not warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _np_gd_loop(X, t, w0, lam, lr, tol, max_iters)


def _np_gd_loop(X, t, w0, lam, lr, tol, max_iters):
    m = X.shape[0]
    w = w0.copy()
    loss = np.nan
    gnorm = np.inf
    for it in range(max_iters + 1):
        s = X @ w
        loss = _np_loss_from_margins(s, t, w, lam)
        g = X.T @ (_np_sigmoid(s) - t) / m + lam * w
        gnorm = float(np.sqrt(g @ g))
        if not (np.isfinite(loss) and np.isfinite(gnorm)):
            return w, it, gnorm, loss, NON_FINITE
        if gnorm <= tol:
            return w, it, gnorm, loss, CONVERGED
        if it == max_iters:
            break
        w = w - lr * g
    return w, max_iters, gnorm, loss, MAX_ITERS


def _np_partial_ate_draws(X, t, y, margins, Z, trim, chunk=65536):
    n = X.shape[0]
    treated = t == 1.0
    out = np.empty(Z.shape[0])
    for start in range(0, Z.shape[0], chunk):
        s = margins[None, :] + Z[start:start + chunk] @ X.T
        if trim > 0.0:
            p = _np_sigmoid(s.ravel()).reshape(s.shape)
            w1 = 1.0 / np.maximum(trim, p)
            w0 = 1.0 / np.maximum(trim, 1.0 - p)
        else:
            # 1/p = 1 + exp(-s) and 1/(1-p) = 1 + exp(s), without dividing
            w1 = 1.0 + np.exp(-s)
            w0 = 1.0 + np.exp(s)
        contrib = np.where(treated[None, :], y * w1, -y * w0)
        out[start:start + chunk] = contrib.sum(axis=1) / n
    return out


numpy_impl = SimpleNamespace(
    name="numpy",
    logistic_gd=_np_logistic_gd,
    partial_ate_draws=_np_partial_ate_draws,
)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def sigmoid1(s):
        if s >= 0.0:
            return 1.0 / (1.0 + np.exp(-s))
        e = np.exp(s)
        return e / (1.0 + e)

    @njit(cache=True)
    def logistic_gd(X, t, w0, lam, lr, tol, max_iters):
        m, d = X.shape
        w = w0.copy()
        g = np.empty(d)
        loss = np.nan
        gnorm = np.inf
        for it in range(max_iters + 1):
            g[:] = 0.0
            ce = 0.0
            for i in range(m):
                s = 0.0
                for j in range(d):
                    s += X[i, j] * w[j]
                p = sigmoid1(s)
                pc = min(max(p, LOG_CLAMP), 1.0 - LOG_CLAMP)
                ce -= t[i] * np.log(pc) + (1.0 - t[i]) * np.log1p(-pc)
                r = p - t[i]
                for j in range(d):
                    g[j] += r * X[i, j]
            ww = 0.0
            gg = 0.0
            for j in range(d):
                g[j] = g[j] / m + lam * w[j]
                ww += w[j] * w[j]
                gg += g[j] * g[j]
            loss = ce / m + 0.5 * lam * ww
            gnorm = np.sqrt(gg)
            if not (np.isfinite(loss) and np.isfinite(gnorm)):
                return w, it, gnorm, loss, NON_FINITE
            if gnorm <= tol:
                return w, it, gnorm, loss, CONVERGED
            if it == max_iters:
                break
            for j in range(d):
                w[j] -= lr * g[j]
        return w, max_iters, gnorm, loss, MAX_ITERS

    @njit(cache=True)
    def partial_ate_draws(X, t, y, margins, Z, trim):
        n, d = X.shape
        k = Z.shape[0]
        out = np.empty(k)
        for r in range(k):
            acc = 0.0
            for i in range(n):
                s = margins[i]
                for j in range(d):
                    s += Z[r, j] * X[i, j]
                if trim > 0.0:
                    p = sigmoid1(s)
                    if t[i] == 1.0:
                        acc += y[i] / max(trim, p)
                    else:
                        acc -= y[i] / max(trim, 1.0 - p)
                else:
                    if t[i] == 1.0:
                        acc += y[i] * (1.0 + np.exp(-s))
                    else:
                        acc -= y[i] * (1.0 + np.exp(s))
            out[r] = acc / n
        return out

    def _gd(X, t, w0, lam, lr, tol, max_iters):
        w, it, gnorm, loss, status = logistic_gd(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(t, dtype=np.float64),
            np.ascontiguousarray(w0, dtype=np.float64),
            float(lam), float(lr), float(tol), int(max_iters),
        )
        return w, int(it), float(gnorm), float(loss), int(status)

    def _draws(X, t, y, margins, Z, trim):
        return partial_ate_draws(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(t, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(margins, dtype=np.float64),
            np.ascontiguousarray(np.atleast_2d(Z), dtype=np.float64),
            float(trim),
        )

    return SimpleNamespace(name="numba", logistic_gd=_gd, partial_ate_draws=_draws)


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_active = numpy_impl if (_DISABLE or numba_impl is None) else numba_impl

BACKEND: str = _active.name
logistic_gd = _active.logistic_gd
partial_ate_draws = _active.partial_ate_draws
