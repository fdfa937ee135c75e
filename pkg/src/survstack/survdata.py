"""Containers for right-censored and longitudinal survival data, with CSV I/O.

The canonical CSV schema is ``time,status,x1..xp`` with a header row.
Longitudinal data adds ``id`` and ``obs_time`` columns, one row per
(subject, measurement).  All values use '.' as the decimal separator;
scientific notation is accepted on input.  Floats are written with
``repr`` so that a write/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "CsvParseError",
    "ValidationError",
    "SurvivalRecord",
    "SurvivalDataset",
    "LongitudinalRecord",
    "LongitudinalDataset",
    "load_csv",
    "write_csv",
    "load_longitudinal_csv",
    "write_longitudinal_csv",
    "validate",
    "baseline_dataset",
]


class CsvParseError(ValueError):
    """A CSV cell or header could not be parsed."""


class ValidationError(ValueError):
    """A parsed value violates the data-model contract."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: covariate vector, observed time, event indicator.

    ``status`` is 1 if the event was observed at ``time`` and 0 if the
    subject was censored (still event-free when last seen).
    """

    covariates: np.ndarray
    time: float
    status: int

    def __post_init__(self):
        cov = _readonly(np.asarray(self.covariates, dtype=float))
        if cov.ndim != 1:
            raise ValidationError("covariates must be a 1-d vector")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariates must be finite")
        object.__setattr__(self, "covariates", cov)
        t = float(self.time)
        if not np.isfinite(t) or t < 0:
            raise ValidationError(f"time must be finite and >= 0, got {self.time}")
        object.__setattr__(self, "time", t)
        if self.status not in (0, 1):
            raise ValidationError(f"status must be 0 or 1, got {self.status}")
        object.__setattr__(self, "status", int(self.status))


@dataclass(frozen=True)
class SurvivalDataset:
    """An immutable collection of :class:`SurvivalRecord` sharing one covariate space.

    Besides the record list, the constructor materializes read-only
    ``covariate_matrix`` (n, p), ``times`` (n,) and ``statuses`` (n,)
    arrays for vectorized consumers.  Datasets with zero events can be
    constructed (and will be reported by :func:`validate`), but fitters
    refuse them.
    """

    records: tuple[SurvivalRecord, ...]
    feature_names: tuple[str, ...] | None = None
    covariate_matrix: np.ndarray = field(init=False, repr=False)
    times: np.ndarray = field(init=False, repr=False)
    statuses: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("dataset must contain at least one record")
        p = records[0].covariates.shape[0]
        for i, r in enumerate(records):
            if r.covariates.shape[0] != p:
                raise ValidationError(
                    f"record {i} has {r.covariates.shape[0]} covariates, expected {p}"
                )
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != p:
                raise ValidationError(
                    f"{len(names)} feature names for {p} covariates"
                )
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(
            self, "covariate_matrix", _readonly(np.array([r.covariates for r in records]))
        )
        object.__setattr__(self, "times", _readonly(np.array([r.time for r in records])))
        object.__setattr__(
            self, "statuses", _readonly(np.array([r.status for r in records], dtype=int))
        )

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def p(self) -> int:
        return self.covariate_matrix.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.statuses.sum())

    def names(self) -> tuple[str, ...]:
        """Feature names, synthesizing ``x1..xp`` when none were given."""
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j + 1}" for j in range(self.p))


@dataclass(frozen=True)
class LongitudinalRecord:
    """One subject with time-dependent covariates.

    ``measurement_times`` must be strictly increasing, start at 0, and
    end at or before the terminal ``time``; ``covariates`` holds one row
    per measurement.
    """

    measurement_times: np.ndarray
    covariates: np.ndarray
    time: float
    status: int

    def __post_init__(self):
        mt = _readonly(np.asarray(self.measurement_times, dtype=float))
        cov = _readonly(np.asarray(self.covariates, dtype=float))
        if mt.ndim != 1 or cov.ndim != 2 or cov.shape[0] != mt.shape[0]:
            raise ValidationError("need one covariate row per measurement time")
        if mt.shape[0] == 0 or mt[0] != 0.0:
            raise ValidationError("first measurement must be at time 0")
        if np.any(np.diff(mt) <= 0):
            raise ValidationError("measurement times must be strictly increasing")
        t = float(self.time)
        if not np.isfinite(t) or t < 0:
            raise ValidationError(f"time must be finite and >= 0, got {self.time}")
        if mt[-1] > t:
            raise ValidationError("last measurement time exceeds terminal time")
        if self.status not in (0, 1):
            raise ValidationError(f"status must be 0 or 1, got {self.status}")
        object.__setattr__(self, "measurement_times", mt)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "status", int(self.status))

    def covariates_at(self, t: float) -> np.ndarray:
        """Most recent covariate row measured at or before ``t``."""
        k = int(np.searchsorted(self.measurement_times, t, side="right")) - 1
        if k < 0:
            raise RuntimeError(
                f"no measurement at or before t={t}; time-0 precondition violated"
            )
        return self.covariates[k]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Immutable collection of :class:`LongitudinalRecord`."""

    records: tuple[LongitudinalRecord, ...]
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("dataset must contain at least one record")
        p = records[0].covariates.shape[1]
        for i, r in enumerate(records):
            if r.covariates.shape[1] != p:
                raise ValidationError(
                    f"record {i} has {r.covariates.shape[1]} covariates, expected {p}"
                )
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != p:
                raise ValidationError(f"{len(names)} feature names for {p} covariates")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def p(self) -> int:
        return self.records[0].covariates.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    @property
    def statuses(self) -> np.ndarray:
        return np.array([r.status for r in self.records], dtype=int)

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j + 1}" for j in range(self.p))


def baseline_dataset(data: LongitudinalDataset) -> SurvivalDataset:
    """Collapse longitudinal data to its time-0 covariates."""
    records = tuple(
        SurvivalRecord(r.covariates[0], r.time, r.status) for r in data.records
    )
    return SurvivalDataset(records, data.feature_names)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_RESERVED = ("time", "status", "id", "obs_time")


def _parse_cell(raw: str, row: int, column: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise CsvParseError(
            f"row {row}, column '{column}': cannot parse {raw!r} as a number"
        ) from None


def _parse_status(raw: str, row: int, column: str) -> int:
    value = _parse_cell(raw, row, column)
    if value not in (0.0, 1.0):
        raise ValidationError(
            f"row {row}, column '{column}': status must be 0 or 1, got {raw!r}"
        )
    return int(value)


def load_csv(path, schema: Mapping[str, object] | None = None) -> SurvivalDataset:
    """Read a survival dataset from CSV.

    Parameters
    ----------
    path : str or pathlib.Path
        File with a header row naming a time column, a status column and
        at least one covariate column.
    schema : mapping, optional
        Overrides column mapping.  Keys: ``"time"`` and ``"status"``
        (column names) and ``"covariates"`` (ordered list of column
        names).  By default the time column is ``time``, the status
        column is ``status``, and every other column is a covariate, in
        header order.

    Raises
    ------
    CsvParseError
        Missing columns or a non-numeric cell (named by row and column).
    ValidationError
        A status value outside {0, 1} or a negative time.
    """
    schema = dict(schema or {})
    time_col = str(schema.get("time", "time"))
    status_col = str(schema.get("status", "status"))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (time_col, status_col):
            if col not in header:
                raise CsvParseError(f"{path}: missing required column '{col}'")
        if "covariates" in schema:
            cov_cols = [str(c) for c in schema["covariates"]]
            for col in cov_cols:
                if col not in header:
                    raise CsvParseError(f"{path}: missing covariate column '{col}'")
        else:
            cov_cols = [h for h in header if h not in (time_col, status_col)]
        if not cov_cols:
            raise CsvParseError(f"{path}: no covariate columns found")
        col_index = {name: header.index(name) for name in header}

        records = []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"row {rownum}: expected {len(header)} cells, got {len(row)}"
                )
            t = _parse_cell(row[col_index[time_col]], rownum, time_col)
            d = _parse_status(row[col_index[status_col]], rownum, status_col)
            x = [_parse_cell(row[col_index[c]], rownum, c) for c in cov_cols]
            records.append(SurvivalRecord(np.array(x), t, d))
    if not records:
        raise CsvParseError(f"{path}: no data rows")
    return SurvivalDataset(tuple(records), tuple(cov_cols))


def write_csv(dataset: SurvivalDataset, path) -> None:
    """Write ``time,status,x1..xp`` CSV; floats use repr for exact round trips."""
    names = dataset.names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", *names])
        for r in dataset.records:
            writer.writerow(
                [repr(float(r.time)), r.status, *(repr(float(v)) for v in r.covariates)]
            )


def load_longitudinal_csv(path) -> LongitudinalDataset:
    """Read longitudinal CSV with columns ``id,obs_time,time,status,x1..xp``.

    Rows belonging to one subject must appear with strictly increasing
    ``obs_time`` and agree on the terminal ``time`` and ``status``.
    Subjects are ordered by first appearance.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        for col in ("id", "obs_time", "time", "status"):
            if col not in header:
                raise CsvParseError(f"{path}: missing required column '{col}'")
        cov_cols = [h for h in header if h not in _RESERVED]
        if not cov_cols:
            raise CsvParseError(f"{path}: no covariate columns found")
        idx = {name: header.index(name) for name in header}

        order: list[str] = []
        per_subject: dict[str, dict] = {}
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            sid = row[idx["id"]]
            obs_t = _parse_cell(row[idx["obs_time"]], rownum, "obs_time")
            t = _parse_cell(row[idx["time"]], rownum, "time")
            d = _parse_status(row[idx["status"]], rownum, "status")
            x = [_parse_cell(row[idx[c]], rownum, c) for c in cov_cols]
            if sid not in per_subject:
                order.append(sid)
                per_subject[sid] = {"obs": [], "x": [], "time": t, "status": d}
            entry = per_subject[sid]
            if entry["time"] != t or entry["status"] != d:
                raise ValidationError(
                    f"row {rownum}: subject '{sid}' has inconsistent time/status"
                )
            entry["obs"].append(obs_t)
            entry["x"].append(x)
    if not order:
        raise CsvParseError(f"{path}: no data rows")
    records = []
    for sid in order:
        entry = per_subject[sid]
        records.append(
            LongitudinalRecord(
                np.array(entry["obs"]),
                np.array(entry["x"]),
                entry["time"],
                entry["status"],
            )
        )
    return LongitudinalDataset(tuple(records), tuple(cov_cols))


def write_longitudinal_csv(dataset: LongitudinalDataset, path) -> None:
    """Write ``id,obs_time,time,status,x1..xp`` CSV, one row per measurement."""
    names = dataset.names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "obs_time", "time", "status", *names])
        for i, r in enumerate(dataset.records):
            for k in range(r.measurement_times.shape[0]):
                writer.writerow(
                    [
                        i,
                        repr(float(r.measurement_times[k])),
                        repr(float(r.time)),
                        r.status,
                        *(repr(float(v)) for v in r.covariates[k]),
                    ]
                )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(dataset: SurvivalDataset) -> list[str]:
    """Report data quirks that fitters should know about.

    Returns a list of warning strings (possibly empty) and never mutates
    the dataset.  Reported: groups of tied event times, zero-variance
    covariate columns, and datasets with no events at all.
    """
    warnings: list[str] = []
    death_times = dataset.times[dataset.statuses == 1]
    if death_times.size == 0:
        warnings.append("no events: all records are censored")
    else:
        _, counts = np.unique(death_times, return_counts=True)
        tie_sizes = counts[counts > 1]
        if tie_sizes.size:
            sizes, ngroups = np.unique(tie_sizes, return_counts=True)
            groups = ", ".join(
                f"{g} group{'s' if g > 1 else ''} of size {s}"
                for s, g in zip(sizes[::-1], ngroups[::-1])
            )
            warnings.append(f"tied death times: {groups}")
    names = dataset.names()
    for j in range(dataset.p):
        col = dataset.covariate_matrix[:, j]
        if np.all(col == col[0]):
            warnings.append(f"covariate '{names[j]}' has zero variance")
    return warnings
