"""Survival-curve prediction from stacked-data learners, with Greenwood bands.

A trained squared-error model f estimates the centered within-stratum
response, so the conditional death probability of a new subject at the
q-th event time is  alpha_q + f(x_new - col_means_q), clamped to [0, 1].
The survival curve is the running product of one minus these hazards; a
confidence band comes from Greenwood's variance formula evaluated on
the training risk-set sizes and death counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

__all__ = [
    "SurvivalCurve",
    "GreenwoodBand",
    "greenwood_band",
    "curve_from_hazards",
    "predict_conditional_hazards",
    "predict_survival_curve",
    "kaplan_meier",
]


@dataclass(frozen=True)
class SurvivalCurve:
    """A right-continuous step estimate of P(survive past t).

    ``survival[q]`` is the value on ``[times[q], times[q+1])``; the
    implicit value before ``times[0]`` is 1.  ``hazards`` are the
    clamped per-period conditional death probabilities whose running
    product of complements builds the curve; ``hazards_raw`` keeps the
    unclamped values for diagnostics.  ``band_undefined[q]`` flags
    periods at or beyond a point where the Greenwood variance is
    infinite (everyone at risk died).
    """

    times: np.ndarray
    survival: np.ndarray
    hazards: np.ndarray
    hazards_raw: np.ndarray
    std_errors: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    band_undefined: np.ndarray
    level: float

    @property
    def clamped_fraction(self) -> float:
        """Share of periods where clamping to [0, 1] was active."""
        if self.hazards.size == 0:
            return 0.0
        return float(np.mean(self.hazards != self.hazards_raw))

    def value_at(self, t) -> float | np.ndarray:
        """Step evaluation: 1 before the first event time, flat between times."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate(([1.0], self.survival))
        out = padded[idx + 1]
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> None:
        """Export ``t,survival,sd,lower,upper,hazard_raw,hazard_clamped``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "survival", "sd", "lower", "upper", "hazard_raw", "hazard_clamped"]
            )
            for q in range(self.times.shape[0]):
                writer.writerow(
                    [
                        repr(float(self.times[q])),
                        repr(float(self.survival[q])),
                        repr(float(self.std_errors[q])),
                        repr(float(self.lower[q])),
                        repr(float(self.upper[q])),
                        repr(float(self.hazards_raw[q])),
                        repr(float(self.hazards[q])),
                    ]
                )


@dataclass(frozen=True)
class GreenwoodBand:
    std_errors: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    undefined: np.ndarray


def greenwood_band(survival, risk_sizes, deaths, level: float = 0.95) -> GreenwoodBand:
    """Greenwood variance band for a product-limit style curve.

    sd(S_q) = S_q * sqrt(sum_{j<=q} d_j / (n_j (n_j - d_j))), with a
    symmetric normal band on the survival scale, clamped to [0, 1].
    Periods where n_j == d_j make the variance infinite; those and all
    later periods are flagged and reported with the vacuous band [0, 1].
    """
    survival = np.asarray(
        getattr(survival, "survival", survival), dtype=float
    )
    n = np.asarray(risk_sizes, dtype=float)
    d = np.asarray(deaths, dtype=float)
    if not (survival.shape == n.shape == d.shape):
        raise ValueError("survival, risk_sizes and deaths must have equal length")
    if np.any(d < 0) or np.any(n < d):
        raise ValueError("need n_j >= d_j >= 0 for every period")
    exhausted = n == d
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(exhausted, np.inf, d / (n * (n - d)))
    cum = np.cumsum(terms)
    undefined = ~np.isfinite(cum)
    sd = survival * np.sqrt(cum)
    # S_q can be exactly 0 where cum is inf; the band is undefined there anyway.
    sd = np.where(undefined, np.inf, sd)
    z = norm.ppf(0.5 + level / 2.0)
    with np.errstate(invalid="ignore"):
        lower = np.clip(survival - z * sd, 0.0, 1.0)
        upper = np.clip(survival + z * sd, 0.0, 1.0)
    lower = np.where(undefined, 0.0, lower)
    upper = np.where(undefined, 1.0, upper)
    return GreenwoodBand(std_errors=sd, lower=lower, upper=upper, undefined=undefined)


def curve_from_hazards(
    times, hazards_raw, risk_sizes, deaths, level: float = 0.95
) -> SurvivalCurve:
    """Assemble a curve from per-period conditional death probabilities.

    Raw hazards are clamped to [0, 1] before the product, which keeps
    the curve inside [0, 1] and nonincreasing no matter the learner.
    """
    times = np.asarray(times, dtype=float)
    raw = np.asarray(hazards_raw, dtype=float)
    hazards = np.clip(raw, 0.0, 1.0)
    survival = np.cumprod(1.0 - hazards)
    band = greenwood_band(survival, risk_sizes, deaths, level=level)
    return SurvivalCurve(
        times=times,
        survival=survival,
        hazards=hazards,
        hazards_raw=raw,
        std_errors=band.std_errors,
        lower=band.lower,
        upper=band.upper,
        band_undefined=band.undefined,
        level=level,
    )


def _strata_of(strata):
    return getattr(strata, "strata", strata)


def predict_conditional_hazards(model, strata, x_new) -> tuple[np.ndarray, np.ndarray]:
    """Per-period conditional death probabilities for a new subject.

    ``model`` must expose ``predict`` and have been trained on the
    centered stack whose strata are supplied (a ``StackedData`` or its
    ``strata`` tuple).  Returns ``(clamped, raw)`` in event-time order.
    """
    strata = _strata_of(strata)
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim != 1:
        raise ValueError("x_new must be a 1-d covariate vector")
    p = strata[0].col_means.shape[0]
    if x_new.shape[0] != p:
        raise ValueError(f"x_new has {x_new.shape[0]} covariates, strata expect {p}")
    centered = np.array([x_new - s.col_means for s in strata])
    raw = np.array([s.alpha for s in strata]) + np.asarray(
        model.predict(centered), dtype=float
    )
    return np.clip(raw, 0.0, 1.0), raw


def predict_survival_curve(model, strata, x_new, level: float = 0.95) -> SurvivalCurve:
    """Survival curve for a new subject from a centered-stack learner.

    The curve steps down at the training event times; the Greenwood
    band uses the training risk-set sizes and death counts, so for the
    zero learner it reproduces the Kaplan-Meier estimate and band of
    the training data.
    """
    strata = _strata_of(strata)
    _, raw = predict_conditional_hazards(model, strata, x_new)
    return curve_from_hazards(
        times=[s.time for s in strata],
        hazards_raw=raw,
        risk_sizes=[s.size for s in strata],
        deaths=[s.deaths for s in strata],
        level=level,
    )


def kaplan_meier(times, statuses, level: float = 0.95) -> SurvivalCurve:
    """Textbook product-limit estimate with its Greenwood band.

    Computed directly from the raw data (one period per distinct death
    time), independent of any stacking machinery.
    """
    times = np.asarray(times, dtype=float)
    statuses = np.asarray(statuses, dtype=int)
    death_times = np.unique(times[statuses == 1])
    if death_times.size == 0:
        raise ValueError("no events: the product-limit estimate is flat at 1")
    sizes = np.array([(times >= t).sum() for t in death_times])
    deaths = np.array(
        [((times == t) & (statuses == 1)).sum() for t in death_times]
    )
    hazards = deaths / sizes
    return curve_from_hazards(death_times, hazards, sizes, deaths, level=level)
