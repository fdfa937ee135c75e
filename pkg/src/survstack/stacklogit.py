"""Logistic regression on the indicator-form stack, and its relation to Cox fits.

The stacked problem gets one free intercept per stratum (the indicator
columns) and no global intercept.  Fitting maximizes the binomial
log-likelihood jointly over (intercepts, covariate coefficients) by
iteratively reweighted least squares; since the intercept block of the
information matrix is diagonal, each Newton step only solves a p x p
system after eliminating the intercepts.

Strata with no response-0 rows (an event whose risk set is just itself)
have unbounded intercepts; they are dropped from the fit with a warning
and recorded on the result, since they add only a constant to the
profile likelihood.

``verify_equivalence`` quantifies, risk set by risk set, how close the
profiled binomial contribution is to the partial-likelihood one: the
profiled intercept is compared against -log(sum exp(eta_j)), and the
two likelihood contributions are compared up to the constant -1.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp
from scipy.stats import norm

from .coxph import PenalizedPath, default_lambda_grid, soft_threshold
from .stacker import StackedData, build_risk_sets
from .survdata import SurvivalDataset

__all__ = [
    "LogisticFit",
    "RiskSetGap",
    "EquivalenceReport",
    "logistic_fit",
    "logistic_fit_l1",
    "logistic_conditional_hazards",
    "verify_equivalence",
]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100


@dataclass
class LogisticFit:
    """Joint (per-stratum intercepts, covariate coefficients) optimum.

    ``intercepts[q]`` belongs to ``stratum_indices[q]`` in the original
    stack; ``dropped_strata`` lists strata excluded for having no
    response-0 rows.  Wald quantities cover the covariate coefficients
    only, from the intercept-profiled information.
    """

    intercepts: np.ndarray
    stratum_indices: np.ndarray
    dropped_strata: tuple[int, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    z_scores: np.ndarray
    p_values: np.ndarray
    deviance: float
    log_likelihood: float
    iterations: int
    converged: bool
    feature_names: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "coefficients": [float(v) for v in self.coefficients],
            "std_errors": [float(v) for v in self.std_errors],
            "z_scores": [float(v) for v in self.z_scores],
            "p_values": [float(v) for v in self.p_values],
            "intercepts": [float(v) for v in self.intercepts],
            "intercept_strata": [int(v) for v in self.stratum_indices],
            "dropped_strata": [int(v) for v in self.dropped_strata],
            "deviance": float(self.deviance),
            "log_likelihood": float(self.log_likelihood),
            "convergence": {
                "iterations": int(self.iterations),
                "converged": bool(self.converged),
            },
            "feature_names": list(self.feature_names) if self.feature_names else None,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _split_indicator_stack(stacked: StackedData):
    """Rows, covariates and retained-stratum bookkeeping for the fit."""
    if stacked.kind != "indicator":
        raise ValueError("logistic fitting requires an indicator-form stack")
    X = stacked.covariates
    y = stacked.response
    s = stacked.stratum_of_row
    m = stacked.n_strata
    sizes = np.bincount(s, minlength=m)
    positives = np.bincount(s, weights=y, minlength=m)
    degenerate = np.flatnonzero(positives >= sizes)
    if degenerate.size:
        warnings.warn(
            f"dropping {degenerate.size} stratum(s) with no response-0 rows; "
            "their intercepts are unbounded and add only a constant",
            stacklevel=3,
        )
    keep_stratum = np.ones(m, dtype=bool)
    keep_stratum[degenerate] = False
    row_keep = keep_stratum[s]
    retained = np.flatnonzero(keep_stratum)
    # Relabel strata 0..m'-1 on the retained rows.
    relabel = np.cumsum(keep_stratum) - 1
    return (
        X[row_keep],
        y[row_keep],
        relabel[s[row_keep]],
        retained,
        tuple(int(q) for q in degenerate),
    )


def _binomial_loglik(alpha, beta, X, y, s):
    eta = alpha[s] + X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_fit(
    stacked: StackedData,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LogisticFit:
    """IRLS fit of the no-global-intercept stacked logistic regression.

    Newton steps on (intercepts, coefficients) use the diagonal
    intercept block: solve the p x p Schur system for the coefficient
    step, back-substitute the intercept steps, and step-halve on the
    binomial log-likelihood.  Converges when the relative log-likelihood
    change drops below ``tol``.
    """
    X, y, s, retained, dropped = _split_indicator_stack(stacked)
    p = X.shape[1]
    m = retained.shape[0]
    if m == 0:
        raise ValueError("no strata with response-0 rows; nothing to fit")
    sizes = np.bincount(s, minlength=m).astype(float)
    positives = np.bincount(s, weights=y, minlength=m)

    alpha = np.log(positives / (sizes - positives))
    beta = np.zeros(p)
    value = _binomial_loglik(alpha, beta, X, y, s)
    converged = False
    iterations = 0
    schur = np.eye(p)
    for iterations in range(1, max_iter + 1):
        eta = alpha[s] + X @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        resid = y - mu
        u = np.bincount(s, weights=resid, minlength=m)
        v = X.T @ resid
        D = np.bincount(s, weights=w, minlength=m)
        D = np.maximum(D, 1e-12)
        wX = X * w[:, None]
        B = np.empty((m, p))
        for k in range(p):
            B[:, k] = np.bincount(s, weights=wX[:, k], minlength=m)
        C = X.T @ wX
        schur = C - B.T @ (B / D[:, None])
        rhs = v - B.T @ (u / D)
        try:
            dbeta = np.linalg.solve(schur, rhs)
        except np.linalg.LinAlgError:
            dbeta = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        dalpha = (u - B @ dbeta) / D

        scale = 1.0
        for _ in range(40):
            new_value = _binomial_loglik(
                alpha + scale * dalpha, beta + scale * dbeta, X, y, s
            )
            if new_value >= value - 1e-12:
                break
            scale /= 2.0
        else:
            break
        alpha = alpha + scale * dalpha
        beta = beta + scale * dbeta
        improvement = new_value - value
        value = new_value
        if abs(improvement) < tol * (abs(value) + 1.0):
            converged = True
            break

    with np.errstate(invalid="ignore"):
        try:
            variances = np.diag(np.linalg.inv(schur))
        except np.linalg.LinAlgError:
            variances = np.full(p, np.nan)
    variances = np.where(variances > 0, variances, np.inf)
    std_errors = np.sqrt(variances)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(np.isfinite(std_errors), beta / std_errors, 0.0)
    p_values = 2.0 * norm.sf(np.abs(z))
    return LogisticFit(
        intercepts=alpha,
        stratum_indices=retained,
        dropped_strata=dropped,
        coefficients=beta,
        std_errors=std_errors,
        z_scores=z,
        p_values=p_values,
        deviance=-2.0 * value,
        log_likelihood=value,
        iterations=iterations,
        converged=converged,
        feature_names=stacked.feature_names,
    )


def logistic_lambda_max(stacked: StackedData) -> float:
    """Full-shrinkage penalty: sup-norm covariate gradient at zero coefficients."""
    X, y, s, _, _ = _split_indicator_stack(stacked)
    m = int(s.max()) + 1 if s.size else 0
    sizes = np.bincount(s, minlength=m).astype(float)
    positives = np.bincount(s, weights=y, minlength=m)
    alpha = np.log(positives / (sizes - positives))
    mu = expit(alpha[s])
    return float(np.max(np.abs(X.T @ (y - mu))))


def logistic_fit_l1(
    stacked: StackedData,
    lambda_grid=None,
    tol: float = 1e-8,
    max_outer: int = 100,
) -> PenalizedPath:
    """L1 path for the covariate coefficients; intercepts stay unpenalized.

    Outer IRLS rebuilds the weighted least-squares surrogate; the inner
    loop cycles closed-form intercept updates with soft-thresholded
    covariate updates, warm-starting each penalty level at the previous
    solution.
    """
    X, y, s, _, _ = _split_indicator_stack(stacked)
    p = X.shape[1]
    m = int(s.max()) + 1
    sizes = np.bincount(s, minlength=m).astype(float)
    positives = np.bincount(s, weights=y, minlength=m)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(logistic_lambda_max(stacked))
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if np.any(np.diff(lambda_grid) > 0):
        raise ValueError("lambda_grid must be nonincreasing")

    alpha = np.log(positives / (sizes - positives))
    beta = np.zeros(p)
    coefs = np.zeros((lambda_grid.shape[0], p))
    converged = np.zeros(lambda_grid.shape[0], dtype=bool)

    def penalized(a, b, lam):
        return _binomial_loglik(a, b, X, y, s) - lam * np.abs(b).sum()

    for i, lam in enumerate(lambda_grid):
        lam = float(lam)
        obj = penalized(alpha, beta, lam)
        ok = False
        for _ in range(max_outer):
            eta = alpha[s] + X @ beta
            mu = expit(eta)
            w = np.maximum(mu * (1.0 - mu), 1e-10)
            z = eta + (y - mu) / w
            # Inner cycles on the weighted surrogate.
            a_new = alpha.copy()
            b_new = beta.copy()
            fitted_x = X @ b_new
            wsum = np.bincount(s, weights=w, minlength=m)
            wxx = (w[:, None] * X * X).sum(axis=0)
            for _ in range(200):
                delta = 0.0
                resid_a = z - fitted_x
                a_prev = a_new
                a_new = np.bincount(s, weights=w * resid_a, minlength=m) / wsum
                delta = max(delta, float(np.max(np.abs(a_new - a_prev))))
                for k in range(p):
                    r_k = z - a_new[s] - fitted_x + X[:, k] * b_new[k]
                    num = float(np.sum(w * X[:, k] * r_k))
                    new = soft_threshold(num, lam) / wxx[k] if wxx[k] > 0 else 0.0
                    if new != b_new[k]:
                        fitted_x = fitted_x + X[:, k] * (new - b_new[k])
                        delta = max(delta, abs(new - b_new[k]))
                        b_new[k] = new
                if delta < 1e-10:
                    break
            # Step-halving on the true penalized binomial objective.
            da, db = a_new - alpha, b_new - beta
            scale = 1.0
            for _ in range(40):
                new_obj = penalized(alpha + scale * da, beta + scale * db, lam)
                if new_obj >= obj - 1e-12:
                    break
                scale /= 2.0
            else:
                break
            alpha = alpha + scale * da
            beta = beta + scale * db
            improvement = new_obj - obj
            obj = new_obj
            if abs(improvement) < tol * (abs(obj) + 1.0):
                ok = True
                break
        coefs[i] = beta
        converged[i] = ok
    return PenalizedPath(
        lambda_grid=lambda_grid,
        coefficients=coefs,
        converged=converged,
        feature_names=stacked.feature_names,
    )


def logistic_conditional_hazards(
    fit: LogisticFit, stacked: StackedData, x_new
) -> np.ndarray:
    """Per-stratum death probabilities sigma(intercept_q + x' beta) for a new subject.

    Strata dropped from the fit (no response-0 rows) fall back to their
    empirical death fraction, which is 1 for a lone-survivor stratum.
    """
    x_new = np.asarray(x_new, dtype=float)
    score = float(x_new @ fit.coefficients)
    hazards = np.array([s.alpha for s in stacked.strata])
    hazards[fit.stratum_indices] = expit(fit.intercepts + score)
    return hazards


# ---------------------------------------------------------------------------
# Numerical comparison of profiled-intercept and partial-likelihood terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskSetGap:
    """Per-risk-set diagnostics of the intercept approximation."""

    anchor: int
    size: int
    exact_intercept: float
    approx_intercept: float
    contribution_gap: float


@dataclass(frozen=True)
class EquivalenceReport:
    rows: tuple[RiskSetGap, ...]

    def sizes(self) -> np.ndarray:
        return np.array([r.size for r in self.rows])

    def intercept_gaps(self) -> np.ndarray:
        return np.array(
            [abs(r.exact_intercept - r.approx_intercept) for r in self.rows]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["size", "exact_intercept", "approx_intercept", "contribution_gap"]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.size,
                        repr(float(r.exact_intercept)),
                        repr(float(r.approx_intercept)),
                        repr(float(r.contribution_gap)),
                    ]
                )


def _profile_intercept(eta: np.ndarray) -> float:
    """Root of sum_j sigma(a + eta_j) = 1; +inf for singleton risk sets."""
    if eta.shape[0] <= 1:
        return np.inf
    spread = float(np.max(np.abs(eta)))

    def excess(a):
        return expit(a + eta).sum() - 1.0

    lo, hi = -spread - 50.0, spread + 50.0
    return float(brentq(excess, lo, hi, xtol=1e-12, rtol=1e-14))


def verify_equivalence(dataset: SurvivalDataset, beta) -> EquivalenceReport:
    """Per-risk-set comparison of stacked-logistic and partial-likelihood terms.

    For each risk set at the supplied coefficients: the exact profiled
    intercept (1-d root find), the large-risk-set approximation
    -log(sum exp(eta_j)), and the gap between the profiled binomial
    contribution and (partial-likelihood contribution - 1).  Singleton
    risk sets report an infinite intercept and an undefined gap.
    """
    beta = np.asarray(beta, dtype=float)
    rows = []
    X = dataset.covariate_matrix
    for rs in build_risk_sets(dataset):
        eta = X[rs.members] @ beta
        anchor_pos = int(np.searchsorted(rs.members, rs.anchor))
        approx = -float(logsumexp(eta))
        exact = _profile_intercept(eta)
        if np.isfinite(exact):
            binom = exact + eta[anchor_pos] - np.sum(np.logaddexp(0.0, exact + eta))
            partial = eta[anchor_pos] + approx
            gap = float(binom - (partial - 1.0))
        else:
            gap = np.nan
        rows.append(
            RiskSetGap(
                anchor=rs.anchor,
                size=rs.size,
                exact_intercept=exact,
                approx_intercept=approx,
                contribution_gap=gap,
            )
        )
    return EquivalenceReport(rows=tuple(rows))
