"""Regularization-path construction and criterion-based selection."""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

BIC = "bic"
GCV = "gcv"


@dataclass(frozen=True)
class TuningGrid:
    """Descending lambda grid plus the selection criterion."""

    lambdas: np.ndarray
    criterion: str = BIC

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1)
        if lam.size == 0:
            raise ValueError("lambda grid is empty")
        if np.any(lam < 0):
            raise ValueError("lambdas must be nonnegative")
        lam = np.sort(lam)[::-1].copy()
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        if self.criterion not in (BIC, GCV):
            raise ValueError("criterion must be 'bic' or 'gcv'")


def bic_score(rss, n, df):
    """n log(rss/n) + df log(n); -inf (with a warning) when rss hits zero."""
    if df < 0 or n <= df:
        raise ValueError("need n > df >= 0")
    if rss <= 0:
        warnings.warn("zero residual sum of squares; BIC is -inf", RuntimeWarning)
        return -math.inf
    return n * math.log(rss / n) + df * math.log(n)


def gcv_score(rss, n, df):
    """(rss/n) / (1 - df/n)^2."""
    if df >= n:
        raise ValueError("GCV requires df < n")
    return (rss / n) / (1.0 - df / n) ** 2


def score(criterion, rss, n, df):
    return bic_score(rss, n, df) if criterion == BIC else gcv_score(rss, n, df)


def lambda_max_scalar(design, y, penalize_mask=None):
    """Smallest lambda zeroing every penalized coefficient at the null fit.

    Unpenalized columns are projected out first, so the kill condition is
    evaluated at the residual the penalized coordinates actually see.
    """
    design = np.asarray(design, float)
    y = np.asarray(y, float).reshape(-1)
    n = y.size
    if penalize_mask is None:
        penalize_mask = np.ones(design.shape[1], dtype=bool)
    mask = np.asarray(penalize_mask, bool)
    r = y
    if np.any(~mask):
        free = design[:, ~mask]
        coef, *_ = np.linalg.lstsq(free, y, rcond=None)
        r = y - free @ coef
    grads = 2.0 * np.abs(design[:, mask].T @ r) / n
    return float(grads.max()) if grads.size else 0.0


def lambda_max_group(design, y, block_sizes):
    """Group analogue: max over penalized blocks of (2/n)||X_j' r||."""
    design = np.asarray(design, float)
    y = np.asarray(y, float).reshape(-1)
    n = y.size
    sizes = np.asarray(block_sizes, int)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    free = design[:, : edges[1]]
    coef, *_ = np.linalg.lstsq(free, y, rcond=None)
    r = y - free @ coef
    best = 0.0
    for j in range(1, len(sizes)):
        g = 2.0 * design[:, edges[j]:edges[j + 1]].T @ r / n
        best = max(best, float(np.linalg.norm(g)))
    return best


def default_grid(lam_max, n_points=50, span=1e-3, criterion=BIC):
    """Log-spaced descending path over [span * lam_max, lam_max]."""
    lam_max = max(float(lam_max), 1e-12)
    lams = np.geomspace(lam_max, lam_max * span, n_points)
    return TuningGrid(lams, criterion)


def select_lambda(fit_closure, grid):
    """Walk the path warm-started and return the criterion minimizer.

    ``fit_closure(lam, warm)`` must return a dict with keys ``result``,
    ``rss``, ``df`` and ``warm`` (state handed to the next, smaller lambda).
    Ties prefer the larger lambda.  Raises if every fit failed.
    """
    best = None
    warm = None
    table = []
    n_failed = 0
    for lam in grid.lambdas:
        try:
            ev = fit_closure(float(lam), warm)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            n_failed += 1
            table.append({"lambda": float(lam), "rss": math.nan,
                          "df": -1, "score": math.inf})
            continue
        warm = ev.get("warm")
        rss, df, n = ev["rss"], ev["df"], ev["n"]
        sc = score(grid.criterion, rss, n, df) if math.isfinite(rss) else math.inf
        table.append({"lambda": float(lam), "rss": float(rss),
                      "df": int(df), "score": sc})
        if math.isfinite(rss) and (best is None or sc < best["score"]):
            best = {"lambda": float(lam), "result": ev["result"], "score": sc}
    if best is None:
        raise RuntimeError(f"lambda selection failed at all {n_failed} grid points")
    return best["lambda"], best["result"], table
