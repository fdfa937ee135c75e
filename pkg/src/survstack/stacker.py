"""Risk-set construction and the stacked classification dataset.

Every uncensored observation anchors a risk set: the subjects still
under observation at its event time.  Stacking turns each risk set into
a block of rows of a binary classification problem ("who failed at this
time?") and concatenates the blocks.  Two layouts are produced:

* indicator form -- one 0/1 indicator column per risk set (a separate
  intercept for each block), followed by the covariate columns;
* centered form -- covariates and response centered within each block,
  so that learners without per-block intercepts can be applied.

Blocks ("strata") are ordered by increasing event time, ties broken by
original record index.  Tied events each anchor their own stratum and
appear in each other's risk sets; within a stratum, every record whose
event happened exactly at the stratum time gets response 1, so the raw
response mean of stratum q is deaths_q / size_q.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .survdata import LongitudinalDataset, SurvivalDataset

__all__ = [
    "NoEventsError",
    "RiskSet",
    "Stratum",
    "StackedData",
    "EventBlock",
    "build_risk_sets",
    "event_blocks",
    "stack",
    "stack_centered",
    "stack_time_varying",
    "subsample_controls",
    "write_stacked_csv",
]

CENTERING_TOL = 1e-10


class NoEventsError(ValueError):
    """Raised when an operation requires at least one uncensored record."""


@dataclass(frozen=True)
class RiskSet:
    """The index set of subjects at risk at one event time.

    ``members`` holds original record indices (ascending) of every
    record with time >= the anchor's time; the anchor itself is always a
    member.  The inequality is closed, so records censored or failing
    exactly at the anchor time are included.
    """

    anchor: int
    members: np.ndarray
    time: float

    def __post_init__(self):
        members = np.asarray(self.members, dtype=int)
        members.setflags(write=False)
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])


@dataclass(frozen=True)
class Stratum:
    """Per-block metadata kept alongside the stacked matrix.

    ``alpha`` is the raw response mean of the block (deaths / size), the
    empirical conditional death probability at this event time.
    ``col_means`` are the within-block covariate column means used for
    centering and for centering new subjects at prediction time.
    """

    index: int
    time: float
    size: int
    deaths: int
    alpha: float
    col_means: np.ndarray
    anchor: int
    members: np.ndarray


@dataclass(frozen=True)
class StackedData:
    """The stacked design matrix, response and per-stratum metadata.

    ``kind`` is ``"indicator"`` (binary response; design holds the
    per-stratum indicator columns first, covariates after) or
    ``"centered"`` (design holds only the centered covariates; the
    response is the 0/1 response minus its within-stratum mean).
    """

    design: np.ndarray
    response: np.ndarray
    stratum_of_row: np.ndarray
    strata: tuple[Stratum, ...]
    kind: str
    n_features: int
    feature_names: tuple[str, ...] | None = None

    @property
    def n_rows(self) -> int:
        return self.design.shape[0]

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def covariates(self) -> np.ndarray:
        """The covariate columns (excludes indicator columns)."""
        if self.kind == "indicator":
            return self.design[:, self.n_strata :]
        return self.design

    @property
    def indicators(self) -> np.ndarray:
        if self.kind != "indicator":
            raise ValueError("centered stacks carry no indicator columns")
        return self.design[:, : self.n_strata]

    def stratum_sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.strata], dtype=int)

    def stratum_deaths(self) -> np.ndarray:
        return np.array([s.deaths for s in self.strata], dtype=int)

    def stratum_times(self) -> np.ndarray:
        return np.array([s.time for s in self.strata])


@dataclass(frozen=True)
class EventBlock:
    """One risk set materialized as a covariate block.

    ``anchor_pos`` is the row of the anchoring event within ``covariates``;
    ``positive_mask`` marks every row whose record failed exactly at
    ``time`` (equals the anchor row alone when event times are distinct).
    """

    time: float
    members: np.ndarray
    covariates: np.ndarray
    anchor_pos: int
    positive_mask: np.ndarray


def _event_order(times: np.ndarray, statuses: np.ndarray) -> np.ndarray:
    """Indices of uncensored records, by increasing time then record index."""
    events = np.flatnonzero(statuses == 1)
    if events.size == 0:
        raise NoEventsError("dataset has no uncensored records; nothing to anchor")
    return events[np.lexsort((events, times[events]))]


def build_risk_sets(dataset: SurvivalDataset) -> list[RiskSet]:
    """One risk set per uncensored record, ordered by increasing event time."""
    times = dataset.times
    out = []
    for i in _event_order(times, dataset.statuses):
        members = np.flatnonzero(times >= times[i])
        out.append(RiskSet(anchor=int(i), members=members, time=float(times[i])))
    return out


def event_blocks(data: SurvivalDataset | LongitudinalDataset) -> list[EventBlock]:
    """Materialize covariate blocks for every risk set.

    For longitudinal data each member contributes its most recent
    measurement at or before the block's event time; static data simply
    slices the covariate matrix.
    """
    if isinstance(data, LongitudinalDataset):
        times = data.times
        statuses = data.statuses
        blocks = []
        for i in _event_order(times, statuses):
            t = float(times[i])
            members = np.flatnonzero(times >= t)
            X = np.array([data.records[j].covariates_at(t) for j in members])
            anchor_pos = int(np.searchsorted(members, i))
            positive = (statuses[members] == 1) & (times[members] == t)
            blocks.append(EventBlock(t, members, X, anchor_pos, positive))
        return blocks

    times = data.times
    statuses = data.statuses
    blocks = []
    for rs in build_risk_sets(data):
        X = data.covariate_matrix[rs.members]
        anchor_pos = int(np.searchsorted(rs.members, rs.anchor))
        positive = (statuses[rs.members] == 1) & (times[rs.members] == rs.time)
        blocks.append(EventBlock(rs.time, rs.members, X, anchor_pos, positive))
    return blocks


def _assemble(blocks: list[EventBlock], p: int, names, centered: bool) -> StackedData:
    m = len(blocks)
    sizes = np.array([b.members.shape[0] for b in blocks])
    total = int(sizes.sum())
    response = np.zeros(total)
    stratum_of_row = np.zeros(total, dtype=int)
    strata = []
    if centered:
        design = np.zeros((total, p))
    else:
        design = np.zeros((total, m + p))
    row = 0
    for q, b in enumerate(blocks):
        k = b.members.shape[0]
        sl = slice(row, row + k)
        raw = b.positive_mask.astype(float)
        alpha = float(raw.mean())
        col_means = b.covariates.mean(axis=0)
        if centered:
            design[sl] = b.covariates - col_means
            response[sl] = raw - alpha
        else:
            design[sl, q] = 1.0
            design[sl, m:] = b.covariates
            response[sl] = raw
        stratum_of_row[sl] = q
        strata.append(
            Stratum(
                index=q,
                time=b.time,
                size=k,
                deaths=int(b.positive_mask.sum()),
                alpha=alpha,
                col_means=col_means,
                anchor=int(b.members[b.anchor_pos]),
                members=b.members,
            )
        )
        row += k
    return StackedData(
        design=design,
        response=response,
        stratum_of_row=stratum_of_row,
        strata=tuple(strata),
        kind="centered" if centered else "indicator",
        n_features=p,
        feature_names=names,
    )


def stack(dataset: SurvivalDataset) -> StackedData:
    """Build the indicator-form stacked classification problem.

    Blocks appear in event-time order.  The indicator columns come
    first (column q is 1 exactly on stratum q's rows), then the
    covariate columns.  With distinct event times each stratum has
    exactly one response of 1, at the anchoring record's row.
    """
    return _assemble(event_blocks(dataset), dataset.p, dataset.feature_names, False)


def stack_centered(dataset: SurvivalDataset) -> StackedData:
    """Build the centered-form stack for squared-error learners.

    Within each stratum the covariate columns and the 0/1 response are
    shifted by their within-stratum means; the removed response mean is
    kept as the stratum's ``alpha`` and the covariate means as
    ``col_means``.  With one death per stratum, alpha = 1/size.
    """
    return _assemble(event_blocks(dataset), dataset.p, dataset.feature_names, True)


def stack_time_varying(data: LongitudinalDataset, centered: bool = False) -> StackedData:
    """Stack longitudinal data, using each member's most recent covariates.

    For a stratum at event time t, member j contributes the measurement
    taken at the largest measurement time <= t.  Everything else matches
    :func:`stack` / :func:`stack_centered`.
    """
    return _assemble(event_blocks(data), data.p, data.feature_names, centered)


def subsample_controls(
    stacked: StackedData, keep_fraction: float, rng_seed: int
) -> StackedData:
    """Thin the response-0 rows of an indicator-form stack.

    Every response-1 row is kept.  Each response-0 row is kept
    independently with probability ``keep_fraction``; one uniform draw
    is consumed per response-0 row, in row order, from
    ``numpy.random.default_rng(rng_seed)``, which makes the result
    bit-reproducible and cheap to re-simulate.  Stratum sizes, response
    means and covariate column means are recomputed on the retained
    rows.  The indicator columns keep their original width.
    """
    if stacked.kind != "indicator":
        raise ValueError("control subsampling operates on indicator-form stacks")
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    rng = np.random.default_rng(rng_seed)
    keep = np.ones(stacked.n_rows, dtype=bool)
    controls = stacked.response == 0.0
    keep[controls] = rng.random(int(controls.sum())) < keep_fraction

    design = stacked.design[keep]
    response = stacked.response[keep]
    stratum_of_row = stacked.stratum_of_row[keep]
    m = stacked.n_strata
    cov = design[:, m:]
    strata = []
    for s in stacked.strata:
        rows = stratum_of_row == s.index
        members = s.members[keep[stacked.stratum_of_row == s.index]]
        raw = response[rows]
        strata.append(
            Stratum(
                index=s.index,
                time=s.time,
                size=int(rows.sum()),
                deaths=int(raw.sum()),
                alpha=float(raw.mean()),
                col_means=cov[rows].mean(axis=0),
                anchor=s.anchor,
                members=members,
            )
        )
    return StackedData(
        design=design,
        response=response,
        stratum_of_row=stratum_of_row,
        strata=tuple(strata),
        kind="indicator",
        n_features=stacked.n_features,
        feature_names=stacked.feature_names,
    )


def write_stacked_csv(stacked: StackedData, path) -> None:
    """Export for external inspection.

    Indicator form: ``stratum,response,ind_1..ind_m,x_1..x_p``; centered
    form drops the indicator columns.
    """
    p = stacked.n_features
    if stacked.feature_names is not None:
        xnames = list(stacked.feature_names)
    else:
        xnames = [f"x_{j + 1}" for j in range(p)]
    header = ["stratum", "response"]
    if stacked.kind == "indicator":
        header += [f"ind_{q + 1}" for q in range(stacked.n_strata)]
    header += xnames
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(stacked.n_rows):
            writer.writerow(
                [
                    int(stacked.stratum_of_row[r]),
                    repr(float(stacked.response[r])),
                    *(repr(float(v)) for v in stacked.design[r]),
                ]
            )
