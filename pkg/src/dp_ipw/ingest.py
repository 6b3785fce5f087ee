"""CSV ingestion, unit-ball normalisation and balanced resampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dp_ipw.core import Dataset
from dp_ipw.rng import RngStream

log = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


class SizeError(ValueError):
    pass


@dataclass(frozen=True)
class CsvSchema:
    treatment_column: str = "t"
    outcome_column: str = "y"
    covariate_columns: tuple[str, ...] = ()
    realization_column: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))
        names = [self.treatment_column, self.outcome_column, *self.covariate_columns]
        if self.realization_column:
            names.append(self.realization_column)
        if len(set(names)) != len(names):
            raise ValueError(f"schema column names must be distinct: {names}")

    def resolve(self, header: list[str]) -> "CsvSchema":
        """Fill in covariates as every remaining column when none are listed."""
        if self.covariate_columns:
            return self
        skip = {self.treatment_column, self.outcome_column, self.realization_column}
        cov = tuple(h for h in header if h not in skip)
        if not cov:
            raise ParseError("no covariate columns found")
        return CsvSchema(self.treatment_column, self.outcome_column, cov, self.realization_column)

    def to_dict(self) -> dict:
        return {
            "treatment_column": self.treatment_column,
            "outcome_column": self.outcome_column,
            "covariate_columns": list(self.covariate_columns),
            "realization_column": self.realization_column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        return cls(
            d.get("treatment_column", "t"),
            d.get("outcome_column", "y"),
            tuple(d.get("covariate_columns", ())),
            d.get("realization_column"),
        )


@dataclass(frozen=True, eq=False)
class StagedTable:
    """Parsed rows before unit-ball normalisation."""

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    schema: CsvSchema
    realizations: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.covariates.shape[0]

    def by_realization(self) -> dict[int, "StagedTable"]:
        if self.realizations is None:
            return {0: self}
        out = {}
        for r in np.unique(self.realizations):
            idx = np.flatnonzero(self.realizations == r)
            out[int(r)] = StagedTable(
                self.covariates[idx], self.treatments[idx], self.outcomes[idx], self.schema, None
            )
        return out


def _cell(raw: str, row: int, col: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {raw!r}")
    return v


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> StagedTable:
    """Read a headered CSV into a :class:`StagedTable`.

    Rows are numbered from 1, not counting the header.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        schema = schema.resolve(header)
        wanted = [schema.treatment_column, schema.outcome_column, *schema.covariate_columns]
        if schema.realization_column:
            wanted.append(schema.realization_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in wanted}
        x_rows, t_vals, y_vals, r_vals = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            t = _cell(row[pos[schema.treatment_column]], row_no, schema.treatment_column)
            if t not in (0.0, 1.0):
                raise ParseError(
                    f"row {row_no}, column {schema.treatment_column!r}: treatment must be 0 or 1, got {t:g}"
                )
            t_vals.append(t)
            y_vals.append(_cell(row[pos[schema.outcome_column]], row_no, schema.outcome_column))
            x_rows.append([_cell(row[pos[c]], row_no, c) for c in schema.covariate_columns])
            if schema.realization_column:
                r_vals.append(
                    int(_cell(row[pos[schema.realization_column]], row_no, schema.realization_column))
                )
    if not t_vals:
        raise ParseError(f"{path}: no data rows")
    return StagedTable(
        np.asarray(x_rows, dtype=np.float64),
        np.asarray(t_vals),
        np.asarray(y_vals),
        schema,
        np.asarray(r_vals) if schema.realization_column else None,
    )


def normalize_unit_ball(staged: StagedTable) -> tuple[Dataset, float]:
    """Divide every covariate row by the largest row norm.

    The division happens even when that norm is already below 1, so every
    dataset ends up with max row norm exactly 1. All-zero covariates are
    left as they are with factor 1.
    """
    if staged.n_rows == 0:
        raise ValueError("cannot normalise an empty table")
    x = staged.covariates
    factor = float(np.max(np.linalg.norm(x, axis=1)))
    if factor == 0.0:
        factor = 1.0
    log.info("unit-ball normalisation factor %.17g", factor)
    return Dataset(x / factor, staged.treatments, staged.outcomes), factor


def write_csv(path: str | Path, data: Dataset, schema: CsvSchema | None = None) -> CsvSchema:
    """Write ``data`` with a header; covariates default to ``x0..x{d-1}``."""
    schema = schema or CsvSchema()
    cov = schema.covariate_columns or tuple(f"x{j}" for j in range(data.dim))
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.treatment_column, schema.outcome_column, *cov])
        for i in range(data.n_rows):
            w.writerow(
                [
                    int(data.treatments[i]),
                    format(float(data.outcomes[i]), ".17g"),
                    *(format(float(v), ".17g") for v in data.covariates[i]),
                ]
            )
    return CsvSchema(schema.treatment_column, schema.outcome_column, cov, None)


@dataclass(frozen=True)
class ResampleProtocol:
    kind: str = "ihdp_balanced"
    fit_per_arm: int = 250
    estimate_per_arm: int = 100
    replacement_fit: bool = True
    replacement_estimate: bool | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("ihdp_balanced", "lalonde_balanced"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.fit_per_arm < 1 or self.estimate_per_arm < 1:
            raise ValueError("per-arm counts must be >= 1")
        if self.replacement_estimate is None:
            object.__setattr__(self, "replacement_estimate", self.kind == "ihdp_balanced")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ResampleResult:
    fit_indices: np.ndarray
    estimate_indices: np.ndarray
    fit: Dataset = field(repr=False)
    estimate: Dataset = field(repr=False)


def _draw_arm(gen, pool: np.ndarray, k: int, replace: bool, label: str) -> np.ndarray:
    if pool.size == 0:
        raise SizeError(f"{label}: arm is empty")
    if not replace and k > pool.size:
        raise SizeError(f"{label}: requested {k} units without replacement from {pool.size}")
    return gen.choice(pool, size=k, replace=replace)


def _balanced(gen, data: Dataset, pool: np.ndarray, per_arm: int, replace: bool, label: str):
    t = data.treatments[pool]
    treated = _draw_arm(gen, pool[t == 1.0], per_arm, replace, f"{label} treated")
    control = _draw_arm(gen, pool[t == 0.0], per_arm, replace, f"{label} control")
    return np.concatenate([treated, control])


def resample_indices(
    data: Dataset,
    protocol: ResampleProtocol,
    stream: RngStream,
    test_data: Dataset | None = None,
) -> ResampleResult:
    """Balanced fit/estimate draws.

    ``ihdp_balanced`` draws the fit part from ``data`` and the estimation
    part from ``test_data`` (``data`` if absent). ``lalonde_balanced`` draws
    the estimation part first, then the fit part from the units left over.
    Estimate indices refer to ``test_data`` when it is given.
    """
    gen = stream.generator()
    all_rows = np.arange(data.n_rows)
    if protocol.kind == "ihdp_balanced":
        est_source = test_data if test_data is not None else data
        fit_idx = _balanced(gen, data, all_rows, protocol.fit_per_arm, protocol.replacement_fit, "fit")
        est_idx = _balanced(
            gen,
            est_source,
            np.arange(est_source.n_rows),
            protocol.estimate_per_arm,
            protocol.replacement_estimate,
            "estimate",
        )
    else:
        est_source = data
        est_idx = _balanced(
            gen, data, all_rows, protocol.estimate_per_arm, protocol.replacement_estimate, "estimate"
        )
        remaining = np.setdiff1d(all_rows, est_idx)
        fit_idx = _balanced(
            gen, data, remaining, protocol.fit_per_arm, protocol.replacement_fit, "fit"
        )
    return ResampleResult(fit_idx, est_idx, data.subset(fit_idx), est_source.subset(est_idx))


def resample(
    data: Dataset,
    protocol: ResampleProtocol,
    stream: RngStream,
    test_data: Dataset | None = None,
) -> tuple[Dataset, Dataset]:
    r = resample_indices(data, protocol, stream, test_data)
    return r.fit, r.estimate
