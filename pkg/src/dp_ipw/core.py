"""Domain types shared across the package, plus dataset splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dp_ipw.rng import RngStream

#: Slack on the unit-ball check, absorbs rounding from max-norm rescaling.
UNIT_BALL_TOL = 1e-12


class UnitBallError(ValueError):
    """A covariate row lies outside the L2 unit ball."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, binary treatments and real outcomes for one sample.

    Arrays are copied and made read-only on construction. Every covariate
    row must have L2 norm at most ``1 + UNIT_BALL_TOL``.
    """

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.covariates, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"covariates must be a 2-D matrix, got shape {x.shape}")
        t = np.asarray(self.treatments, dtype=np.float64).ravel()
        y = np.asarray(self.outcomes, dtype=np.float64).ravel()
        if not (x.shape[0] == t.shape[0] == y.shape[0]):
            raise ValueError(
                f"row count mismatch: covariates {x.shape[0]}, "
                f"treatments {t.shape[0]}, outcomes {y.shape[0]}"
            )
        if not np.all((t == 0.0) | (t == 1.0)):
            bad = int(np.flatnonzero((t != 0.0) & (t != 1.0))[0])
            raise ValueError(f"treatment at row {bad} is {t[bad]!r}, expected 0 or 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("covariates and outcomes must be finite")
        report = validate_unit_ball(x)
        if not report.passed:
            raise UnitBallError(
                f"row {report.worst_row} has L2 norm {report.worst_norm:.17g} > 1"
            )
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "treatments", _frozen(t))
        object.__setattr__(self, "outcomes", _frozen(y))

    @property
    def n_rows(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.covariates[idx], self.treatments[idx], self.outcomes[idx])

    def with_outcomes(self, outcomes) -> "Dataset":
        return Dataset(self.covariates, self.treatments, outcomes)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.treatments, other.treatments)
            and np.array_equal(self.outcomes, other.outcomes)
        )


class BudgetError(ValueError):
    """Privacy parameters outside their admissible open intervals."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair, both strictly inside (0, 1)."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise BudgetError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not 0.0 < self.delta < 1.0:
            raise BudgetError(f"delta must lie in (0, 1), got {self.delta!r}")


@dataclass(frozen=True, eq=False)
class Split:
    """Row indices of the fitting part and the estimation part."""

    fit_indices: np.ndarray
    estimate_indices: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "fit_indices", np.asarray(self.fit_indices, dtype=np.intp))
        object.__setattr__(
            self, "estimate_indices", np.asarray(self.estimate_indices, dtype=np.intp)
        )
        if self.m < 1 or self.n < 1:
            raise ValueError("both parts of a split need at least one row")
        union = np.concatenate([self.fit_indices, self.estimate_indices])
        if not np.array_equal(np.sort(union), np.arange(union.size)):
            raise ValueError("split indices must be disjoint and cover 0..N-1")

    @property
    def m(self) -> int:
        return int(self.fit_indices.size)

    @property
    def n(self) -> int:
        return int(self.estimate_indices.size)


@dataclass(frozen=True)
class OutcomeBounds:
    """Bounds the sensitivity analysis relies on.

    ``c_y`` bounds ``|y|``; ``omega_lo``/``omega_hi`` bound the propensity
    scores for the ATE; ``xi_exp`` bounds ``exp(+-w.x)`` for ATT/ATC.
    """

    c_y: float
    omega_lo: float = 0.05
    omega_hi: float = 0.95
    xi_exp: float = 1.0

    def __post_init__(self) -> None:
        if not self.c_y >= 0.0:
            raise ValueError(f"c_y must be non-negative, got {self.c_y!r}")
        if not (0.0 < self.omega_lo < self.omega_hi < 1.0):
            raise ValueError(
                f"need 0 < omega_lo < omega_hi < 1, got {self.omega_lo!r}, {self.omega_hi!r}"
            )
        if not self.xi_exp >= 1.0:
            raise ValueError(f"xi_exp must be >= 1, got {self.xi_exp!r}")


@dataclass(frozen=True)
class UnitBallReport:
    passed: bool
    worst_row: int
    worst_norm: float = 0.0

    def __bool__(self) -> bool:
        return self.passed


def validate_unit_ball(data: Dataset | np.ndarray) -> UnitBallReport:
    """Report whether every covariate row is inside the unit ball.

    Accepts a raw matrix too, since a constructed ``Dataset`` can never fail.
    """
    x = data.covariates if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, float))
    if x.shape[0] == 0:
        return UnitBallReport(True, -1, 0.0)
    norms = np.linalg.norm(x, axis=1)
    worst = int(np.argmax(norms))
    return UnitBallReport(bool(norms[worst] <= 1.0 + UNIT_BALL_TOL), worst, float(norms[worst]))


def split_dataset(
    data: Dataset, m: int, seed: int | RngStream, *, stratify: bool = False
) -> tuple[Dataset, Dataset, Split]:
    """Randomly split ``data`` into a fitting part of ``m`` rows and the rest.

    A uniform permutation is drawn and its first ``m`` entries form the fit
    part. With ``stratify=True`` each treatment arm is split in proportion.
    """
    n_rows = data.n_rows
    if not 1 <= m < n_rows:
        raise ValueError(f"m must satisfy 1 <= m < {n_rows}, got {m}")
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed), 0)
    gen = stream.generator()
    if not stratify:
        perm = gen.permutation(n_rows)
        fit, est = perm[:m], perm[m:]
    else:
        fit_parts, est_parts = [], []
        treated = np.flatnonzero(data.treatments == 1.0)
        control = np.flatnonzero(data.treatments == 0.0)
        m_treated = int(round(m * treated.size / n_rows))
        m_treated = min(max(m_treated, 0), treated.size)
        m_control = m - m_treated
        if m_control > control.size:
            m_control = control.size
            m_treated = m - m_control
        for arm, k in ((treated, m_treated), (control, m_control)):
            p = gen.permutation(arm)
            fit_parts.append(p[:k])
            est_parts.append(p[k:])
        fit = gen.permutation(np.concatenate(fit_parts))
        est = gen.permutation(np.concatenate(est_parts))
    split = Split(fit, est)
    return data.subset(split.fit_indices), data.subset(split.estimate_indices), split


def recombine(d_m: Dataset, d_n: Dataset, split: Split) -> Dataset:
    """Inverse of :func:`split_dataset`: restore the original row order."""
    n_rows = split.m + split.n
    x = np.empty((n_rows, d_m.dim))
    t = np.empty(n_rows)
    y = np.empty(n_rows)
    for part, idx in ((d_m, split.fit_indices), (d_n, split.estimate_indices)):
        x[idx] = part.covariates
        t[idx] = part.treatments
        y[idx] = part.outcomes
    return Dataset(x, t, y)
