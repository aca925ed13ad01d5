"""Full and cluster-reduced generalized linear model fits.

Each cluster hypothesis ("none of these predictors carries signal") is tested
by comparing the full model against a refit with the cluster's columns
removed: an exact partial F-test for the Gaussian family, a likelihood-ratio
test against chi-square for logistic and Poisson (log link).  The full-model
fit is shared, read-only, across all reduced fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg, special, stats

from .errors import InputError, NumericalError
from .tree import ClusterTree

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
_MU_EPS = 1e-10
_ETA_CLIP = 30.0


class ModelFamily(str, Enum):
    gaussian = "gaussian"
    logistic = "logistic"
    poisson = "poisson"

    @classmethod
    def parse(cls, text: str) -> "ModelFamily":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InputError(
                f"unknown family {text!r}; choose from "
                f"{[f.value for f in cls]}"
            ) from None


@dataclass(frozen=True)
class FitResult:
    """One fitted model.

    ``coefficients[0]`` is the intercept.  ``rss`` is only set for the
    Gaussian family.  ``converged`` is False when IRLS hit the iteration cap
    (e.g. complete separation); the log-likelihood achieved so far is still
    reported and usable in a likelihood-ratio test.
    """

    coefficients: np.ndarray
    log_likelihood: float
    residual_df: int
    converged: bool
    iterations: int
    family: ModelFamily
    rss: float | None = None


def _design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def _check_rank(design: np.ndarray, columns: Sequence[int]) -> None:
    """Raise naming the dependent data columns if the design is rank-deficient."""
    if design.shape[1] == 1:
        return
    _, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < design.shape[1]:
        dependent = sorted(
            columns[p - 1] for p in piv[rank:] if p >= 1
        )  # pivot 0 is the intercept
        raise NumericalError(
            f"design matrix is rank deficient; dependent column(s): {dependent}"
        )


def _gaussian_fit(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, float]:
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    rss = float(resid @ resid)
    n = y.shape[0]
    if rss <= 0:
        ll = math.inf  # perfect fit: profiled variance collapses
    else:
        ll = -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)
    return beta, rss, ll


def _logistic_ll(eta: np.ndarray, y: np.ndarray) -> float:
    # log(1 + exp(eta)) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _poisson_ll(eta: np.ndarray, y: np.ndarray) -> float:
    mu = np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
    return float(np.sum(y * eta - mu - special.gammaln(y + 1.0)))


def _irls(
    design: np.ndarray, y: np.ndarray, family: ModelFamily
) -> tuple[np.ndarray, float, bool, int]:
    """Iteratively reweighted least squares with step-halving.

    Stops when the relative log-likelihood change drops below IRLS_TOL or at
    the iteration cap, whichever comes first.
    """
    n, k = design.shape
    beta = np.zeros(k)
    if family is ModelFamily.logistic:
        mean_y = min(max(y.mean(), 1e-6), 1 - 1e-6)
        beta[0] = math.log(mean_y / (1 - mean_y))
        ll_fn = _logistic_ll
    else:
        beta[0] = math.log(max(y.mean(), 1e-6))
        ll_fn = _poisson_ll

    eta = design @ beta
    ll = ll_fn(eta, y)
    converged = False
    iteration = 0
    for iteration in range(1, IRLS_MAX_ITER + 1):
        eta = np.clip(design @ beta, -_ETA_CLIP, _ETA_CLIP)
        if family is ModelFamily.logistic:
            mu = special.expit(eta)
            w = np.maximum(mu * (1.0 - mu), _MU_EPS)
            z = eta + (y - mu) / w
        else:
            mu = np.exp(eta)
            w = np.maximum(mu, _MU_EPS)
            z = eta + (y - mu) / w

        wd = design * w[:, None]
        try:
            new_beta = linalg.solve(design.T @ wd, wd.T @ z, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise NumericalError(f"IRLS normal equations singular: {exc}") from exc

        new_ll = ll_fn(design @ new_beta, y)
        step = new_beta - beta
        halvings = 0
        while new_ll < ll and halvings < 20:
            step *= 0.5
            new_beta = beta + step
            new_ll = ll_fn(design @ new_beta, y)
            halvings += 1

        beta = new_beta
        # purely relative criterion: a degenerate fit whose likelihood creeps
        # toward a finite limit while coefficients diverge (complete
        # separation) keeps failing this test and runs to the iteration cap
        if new_ll == ll or abs(new_ll - ll) <= IRLS_TOL * abs(new_ll):
            ll = new_ll
            converged = True
            break
        ll = new_ll

    return beta, ll, converged, iteration


def fit_glm(X: np.ndarray, y: np.ndarray, family: ModelFamily) -> FitResult:
    """Fit one model of the given family with an intercept.

    X holds the included predictor columns only (possibly zero of them).
    Gaussian responses use least squares with profiled variance; logistic and
    Poisson use IRLS.  Rank-deficient designs raise naming the dependent
    columns; IRLS non-convergence is reported through the ``converged`` flag
    rather than raised.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"X must be a 2-d matrix, got ndim={X.ndim}")
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    if y.shape[0] != n:
        raise InputError(f"X has {n} rows but y has {y.shape[0]}")
    if n <= k:
        raise InputError(f"need more observations than predictors: n={n}, k={k}")

    design = _design(X)
    _check_rank(design, list(range(k)))
    residual_df = n - design.shape[1]

    if family is ModelFamily.gaussian:
        beta, rss, ll = _gaussian_fit(design, y)
        return FitResult(beta, ll, residual_df, True, 0, family, rss=rss)

    if family is ModelFamily.logistic and not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("logistic responses must be 0/1")
    if family is ModelFamily.poisson and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise InputError("poisson responses must be nonnegative counts")

    beta, ll, converged, iters = _irls(design, y, family)
    return FitResult(beta, ll, residual_df, converged, iters, family)


def cluster_pvalue(
    X: np.ndarray,
    y: np.ndarray,
    family: ModelFamily,
    full: FitResult,
    members: Iterable[int],
) -> float:
    """Upper-tail p-value for "the cluster's predictors are all noise".

    Refits with the cluster's columns removed and compares to the full fit:
    partial F-test with (|C|, n - p - 1) degrees of freedom for Gaussian
    (variance estimated from the full model), likelihood-ratio against
    chi-square(|C|) otherwise.  Test statistics are clamped at zero against
    numerical noise.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    cluster = sorted(set(int(i) for i in members))
    if not cluster:
        raise InputError("cluster must be nonempty")
    p = X.shape[1]
    if cluster[0] < 0 or cluster[-1] >= p:
        raise InputError(f"cluster members {cluster} outside columns 0..{p - 1}")

    keep = [j for j in range(p) if j not in cluster]
    try:
        reduced = fit_glm(X[:, keep], y, family)
    except (InputError, NumericalError) as exc:
        raise NumericalError(f"reduced fit without columns {cluster} failed: {exc}") from exc

    df_cluster = len(cluster)
    if family is ModelFamily.gaussian:
        df_resid = full.residual_df
        if full.rss is None or reduced.rss is None:
            raise NumericalError("gaussian fits must carry residual sums of squares")
        if full.rss <= 0:
            # noise-free response: any removal that costs fit is infinitely
            # significant, one that costs nothing carries no evidence
            return 0.0 if reduced.rss > 1e-12 * y.shape[0] else 1.0
        f_stat = max(reduced.rss - full.rss, 0.0) / df_cluster / (full.rss / df_resid)
        return float(stats.f.sf(f_stat, df_cluster, df_resid))

    lr_stat = max(2.0 * (full.log_likelihood - reduced.log_likelihood), 0.0)
    return float(stats.chi2.sf(lr_stat, df_cluster))


def all_cluster_pvalues(
    tree: ClusterTree, X: np.ndarray, y: np.ndarray, family: ModelFamily
) -> np.ndarray:
    """One conservative p-value per tree node, sharing a single full fit."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != tree.leaf_count:
        raise InputError(
            f"data has {X.shape[1] if X.ndim == 2 else '?'} columns but the tree "
            f"has {tree.leaf_count} leaves"
        )
    full = fit_glm(X, y, family)
    pvalues = np.empty(len(tree))
    for node in tree.nodes:
        try:
            pvalues[node.id] = cluster_pvalue(X, y, family, full, node.members)
        except NumericalError as exc:
            raise NumericalError(f"cluster {node.id} ({sorted(node.members)}): {exc}") from exc
    return pvalues
