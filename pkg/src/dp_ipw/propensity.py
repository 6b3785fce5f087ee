"""L2-regularised logistic regression for propensity scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dp_ipw import _kernels
from dp_ipw.core import Dataset

INTERCEPT_SCALE = 1.0 / np.sqrt(2.0)


class OptimizationError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class OptimizerSettings:
    """Gradient-descent settings.

    ``lr="auto"`` uses ``2 / (L + lam)`` with ``L = lmax(X'X) / (4m) + lam``,
    the optimal fixed step for a ``lam``-strongly convex, L-smooth loss.
    """

    lr: float | str = 1.0
    tol: float = 1e-8
    max_iters: int = 100_000
    intercept: bool = False


def add_intercept(x: np.ndarray) -> np.ndarray:
    """Append a constant column while keeping rows in the unit ball.

    Rows become ``[x, 1] / sqrt(2)``, so ``||row||^2 = (||x||^2 + 1) / 2 <= 1``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.hstack([x, np.ones((x.shape[0], 1))]) * INTERCEPT_SCALE


@dataclass(frozen=True, eq=False)
class PropensityModel:
    weights: np.ndarray
    lam: float
    m_train: int
    converged: bool
    final_loss: float
    n_iter: int = 0
    grad_norm: float = 0.0
    intercept: bool = False

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64, copy=True).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        """Covariate dimension the model expects (before any intercept)."""
        return self.weights.size - int(self.intercept)

    def design(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: model expects {self.dim}, got {x.shape[1]}")
        return add_intercept(x) if self.intercept else x

    def margins(self, x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if weights is None else weights
        return self.design(x) @ w

    def scores(self, x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        return sigmoid(self.margins(x, weights))

    def to_dict(self) -> dict:
        return {
            "weights": [float(v) for v in self.weights],
            "lambda": float(self.lam),
            "m_train": int(self.m_train),
            "converged": bool(self.converged),
            "final_loss": float(self.final_loss),
            "n_iter": int(self.n_iter),
            "grad_norm": float(self.grad_norm),
            "intercept": bool(self.intercept),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropensityModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            lam=float(d["lambda"]),
            m_train=int(d["m_train"]),
            converged=bool(d.get("converged", True)),
            final_loss=float(d.get("final_loss", np.nan)),
            n_iter=int(d.get("n_iter", 0)),
            grad_norm=float(d.get("grad_norm", np.nan)),
            intercept=bool(d.get("intercept", False)),
        )


def sigmoid(s):
    """Overflow-safe logistic function, elementwise."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0:
        return float(_kernels._np_sigmoid(s.reshape(1))[0])
    return _kernels._np_sigmoid(s)


def sigmoid_score(model: PropensityModel | np.ndarray, x) -> float:
    """Propensity score of a single covariate row."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if isinstance(model, PropensityModel):
        return float(model.scores(x[None, :])[0])
    w = np.asarray(model, dtype=np.float64).ravel()
    if w.size != x.size:
        raise ValueError(f"dimension mismatch: weights {w.size}, row {x.size}")
    return sigmoid(float(w @ x))


def _design(data: Dataset, intercept: bool) -> np.ndarray:
    return add_intercept(data.covariates) if intercept else data.covariates


def loss(w, data: Dataset, lam: float, *, intercept: bool = False) -> float:
    """Mean cross-entropy plus ``lam/2 * ||w||^2``.

    Scores are clamped to ``[1e-15, 1 - 1e-15]`` inside the logs.
    """
    if data.n_rows == 0:
        raise ValueError("loss is undefined on an empty dataset")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    w = np.asarray(w, dtype=np.float64).ravel()
    s = _design(data, intercept) @ w
    return float(_kernels._np_loss_from_margins(s, data.treatments, w, lam))


def gradient(w, data: Dataset, lam: float, *, intercept: bool = False) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    x = _design(data, intercept)
    p = sigmoid(x @ w)
    return x.T @ (p - data.treatments) / data.n_rows + lam * w


def auto_step(x: np.ndarray, lam: float) -> float:
    gram_max = float(np.linalg.eigvalsh(x.T @ x / x.shape[0])[-1])
    smooth = 0.25 * gram_max + lam
    return 2.0 / (smooth + lam)


def train(
    data: Dataset,
    lam: float = 0.1,
    opts: OptimizerSettings | None = None,
    *,
    w0: np.ndarray | None = None,
) -> PropensityModel:
    """Full-batch gradient descent on the regularised logistic loss.

    Stops once ``||grad||_2 <= opts.tol`` or after ``opts.max_iters`` steps.
    The default step of 1.0 is stable because the Hessian norm is at most
    ``1/4 + lam`` for rows in the unit ball.
    """
    opts = opts or OptimizerSettings()
    if data.n_rows == 0:
        raise ValueError("cannot train on an empty dataset")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    x = _design(data, opts.intercept)
    lr = auto_step(x, lam) if opts.lr == "auto" else float(opts.lr)
    w_init = np.zeros(x.shape[1]) if w0 is None else np.asarray(w0, dtype=np.float64).ravel()
    w, n_iter, gnorm, final_loss, status = _kernels.logistic_gd(
        x, data.treatments, w_init, lam, lr, opts.tol, opts.max_iters
    )
    if status == _kernels.NON_FINITE:
        raise OptimizationError(n_iter, f"non-finite loss or gradient (loss={final_loss!r})")
    model = PropensityModel(
        weights=w,
        lam=float(lam),
        m_train=data.n_rows,
        converged=status == _kernels.CONVERGED,
        final_loss=0.0,
        n_iter=n_iter,
        grad_norm=gnorm,
        intercept=opts.intercept,
    )
    # recompute on the returned weights so final_loss is exactly J(w, D_m)
    object.__setattr__(model, "final_loss", loss(model.weights, data, lam, intercept=opts.intercept))
    return model


def erm_sensitivity(m: int, lam: float) -> float:
    """L2-sensitivity bound ``2 / (m * lam)`` of the regularised ERM minimiser."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    return 2.0 / (m * lam)
