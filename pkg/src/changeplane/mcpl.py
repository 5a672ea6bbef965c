"""Two-stage multi-threshold change-plane estimation.

Stage one (splitting) sorts the sample by the current index W = z' theta,
cuts it into consecutive segments, and fits a group-penalized regression in
which each segment boundary owns a potential coefficient jump; the surviving
jump blocks determine the number of thresholds and coarse candidate
intervals.  Stage two (refining) polishes the thresholds, the plane direction
and sparse coefficients by penalized smoothed least squares.  The stages are
iterated until the estimated number of thresholds repeats.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from changeplane import model as cpmodel
from changeplane import penalties as pen
from changeplane import tuning
from changeplane.optimize import (OptimizerSettings, SmoothingSpec,
                                  cd_penalized_ls, default_bandwidth,
                                  gcd_penalized_ls, smoothed_gradient,
                                  smoothed_indicator, smoothed_objective,
                                  sphere_optimize)
from changeplane.scpl import initial_theta


@dataclass(frozen=True)
class McplConfig:
    penalty: pen.PenaltySpec = pen.PenaltySpec()
    smoothing: SmoothingSpec = None        # None -> sd(W) * n**-0.7
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    m: int = None                          # segment size; None -> ceil(sqrt(n))
    split_grid: tuning.TuningGrid = None   # None -> theory-rate grid
    refine_grid: tuning.TuningGrid = None  # None -> default path
    select: str = tuning.BIC               # criterion for the refine path
    max_stage_iter: int = 6


@dataclass(frozen=True)
class SplitPlan:
    """Segmentation of the sample by sorted index values.

    ``rank_map[i]`` is the original index of the i-th smallest W (ties broken
    by original position); segment j spans sorted rows
    ``bounds[j] : bounds[j + 1]``.  The first segment absorbs the remainder
    n - q_n * m, which lies in [m, 2m).
    """

    m: int
    q_n: int
    rank_map: np.ndarray
    bounds: np.ndarray

    @property
    def n_segments(self):
        return self.q_n + 1

    def segments(self):
        """Index sets I_1 .. I_{q_n+1} in original row numbering."""
        return [self.rank_map[self.bounds[j]:self.bounds[j + 1]]
                for j in range(self.n_segments)]


@dataclass(frozen=True)
class SplitResult:
    """Outcome of the splitting stage.

    ``active`` holds the 1-based indices of nonzero coefficient blocks
    (block 1 is the baseline); ``jump_starts`` applies the isolated-jump rule:
    a block counts as a threshold only when its predecessor block is zero.
    """

    gamma_star: np.ndarray
    block_sizes: np.ndarray
    active: tuple
    jump_starts: tuple
    s_hat: int
    candidate_intervals: tuple
    init_thresholds: np.ndarray
    plan: SplitPlan
    lambda_used: float
    score_table: list

    def __post_init__(self):
        act = set(self.active)
        for k in self.jump_starts:
            if k not in act or (k - 1) in act:
                raise ValueError("jump rule violated: need block k active and k-1 inactive")
        if self.s_hat != len(self.jump_starts):
            raise ValueError("s_hat disagrees with the jump set")


def make_split_plan(w, m):
    """Segment the sample by ascending W into q_n + 1 = floor(n/m) blocks."""
    w = np.asarray(w, float).reshape(-1)
    n = w.size
    m = int(m)
    if m < 1 or 2 * m > n:
        raise ValueError("segment size m must satisfy 2m <= n")
    q_n = n // m - 1
    first = n - q_n * m
    bounds = np.concatenate([[0, first], first + m * np.arange(1, q_n + 1)])
    rank_map = np.argsort(w, kind="stable")
    return SplitPlan(m, q_n, rank_map, bounds.astype(int))


def build_block_design(data, plan):
    """Cumulative jump coding of the sorted design.

    Returns (X_tilde, y_tilde, row_starts): block column j (0-based) equals
    the sorted X with rows before segment j + 1 zeroed, so its coefficient is
    the jump gained on entering that segment.
    """
    order = plan.rank_map
    xs = data.x[order]
    ys = data.y[order]
    n, p = xs.shape
    nb = plan.n_segments
    xt = np.zeros((n, nb * p))
    row_starts = np.empty(nb, dtype=np.int64)
    for j in range(nb):
        start = int(plan.bounds[j]) if j > 0 else 0
        row_starts[j] = start
        xt[start:, j * p:(j + 1) * p] = xs[start:]
    return xt, ys, row_starts


def split_lambda_grid(n, q_n, p, criterion=tuning.BIC):
    """Theory-rate grid: [0.05, 5] * sqrt(log n * log(q_n p)) / sqrt(n)."""
    scale = math.sqrt(math.log(n) * math.log(max(q_n * p, 3))) / math.sqrt(n)
    return tuning.TuningGrid(np.geomspace(5.0 * scale, 0.05 * scale, 50),
                             criterion)


def split_stage(data, theta_hat, m, spec, settings=None, grid=None):
    """Estimate the number of thresholds by group-penalized segment jumps."""
    settings = settings or OptimizerSettings()
    theta = theta_hat.values if isinstance(theta_hat, cpmodel.ThetaVector) \
        else np.asarray(theta_hat, float)
    w = cpmodel.index_values(data, theta)
    plan = make_split_plan(w, m)
    design, ys, row_starts = build_block_design(data, plan)
    n, p = data.n, data.p
    sizes = np.full(plan.n_segments, p, dtype=np.int64)
    if grid is None:
        grid = split_lambda_grid(n, plan.q_n, p)

    def closure(lam, warm):
        res = gcd_penalized_ls(design, ys, sizes, spec.with_lambda(lam),
                               settings=settings, beta0=warm,
                               row_starts=row_starts)
        gamma = res["beta"]
        r = ys - design @ gamma
        return {"result": gamma, "rss": float(r @ r),
                "df": int(np.count_nonzero(gamma)), "n": n, "warm": gamma}

    lam_best, gamma, table = tuning.select_lambda(closure, grid)

    ws = w[plan.rank_map]
    active = tuple(j + 1 for j in range(plan.n_segments)
                   if np.any(gamma[j * p:(j + 1) * p] != 0.0))
    act = set(active)
    jumps = tuple(j for j in range(2, plan.n_segments + 1)
                  if j in act and (j - 1) not in act)
    intervals = []
    inits = []
    for k in jumps:
        lo_row = plan.bounds[k - 2]          # first row of segment k-1
        lo = float(ws[lo_row - 1]) if lo_row > 0 else -math.inf
        hi = float(ws[plan.bounds[k] - 1])   # last row of segment k
        intervals.append((lo, hi))
        inits.append(float(np.median(ws[lo_row:plan.bounds[k]])))
    return SplitResult(gamma, sizes, active, jumps, len(jumps),
                       tuple(intervals), np.asarray(inits), plan,
                       lam_best, table)


def _decode_thresholds(u):
    a = np.empty(u.size)
    a[0] = u[0]
    for k in range(1, u.size):
        a[k] = a[k - 1] + math.exp(min(u[k], 50.0))
    return a


def _encode_thresholds(a):
    u = np.empty(a.size)
    u[0] = a[0]
    gaps = np.diff(a)
    if np.any(gaps <= 0):
        raise ValueError("initial thresholds must be strictly increasing")
    u[1:] = np.log(gaps)
    return u


def _plane_step(data, beta, deltas, u, theta, h, settings):
    """Joint smoothed minimization over (theta on the sphere, thresholds)."""
    coeffs = (beta, deltas)

    def f(th, uu):
        return smoothed_objective(data, coeffs, _decode_thresholds(uu), th, h)

    def g(th, uu):
        a = _decode_thresholds(uu)
        _, g_a, g_th = smoothed_gradient(data, coeffs, a, th, h)
        g_u = np.empty_like(uu)
        g_u[0] = g_a.sum()
        for k in range(1, uu.size):
            g_u[k] = math.exp(min(uu[k], 50.0)) * g_a[k:].sum()
        return g_th, g_u

    return sphere_optimize(f, g, theta, settings, extra0=u)


def _threshold_step_only(data, beta, deltas, u, h, settings):
    """Corollary-1 mode (d = 1): optimize the thresholds with theta fixed at 1."""
    coeffs = (beta, deltas)
    theta = np.ones(1)

    def f(uu):
        return smoothed_objective(data, coeffs, _decode_thresholds(uu), theta, h)

    def g(uu):
        a = _decode_thresholds(uu)
        _, g_a, _ = smoothed_gradient(data, coeffs, a, theta, h)
        g_u = np.empty_like(uu)
        g_u[0] = g_a.sum()
        for k in range(1, uu.size):
            g_u[k] = math.exp(min(uu[k], 50.0)) * g_a[k:].sum()
        return g_u

    # reuse the sphere driver with a frozen direction by optimizing extras only
    res = sphere_optimize(lambda th, uu: f(uu),
                          lambda th, uu: (np.zeros(1), g(uu)),
                          theta, settings, extra0=u)
    return res


def refine_stage(data, s, init, penalty, smoothing=None, settings=None,
                 anneal=True, track_objective=False):
    """Penalized smoothed refinement of (gamma, a, theta) at fixed lambda.

    ``init`` is a tuple (gamma, a, theta) with gamma flat of length (s+1)p,
    ``a`` strictly increasing and ``theta`` unit norm.  Threshold ordering is
    maintained by optimizing (a_1, log-spacings).  A collapsed spacing or an
    empty group triggers a retry with one fewer threshold; the returned fit
    then has fewer thresholds than requested.
    """
    settings = settings or OptimizerSettings()
    if s < 1:
        raise ValueError("refine stage needs s >= 1")
    gamma0, a0, theta0 = init
    gamma = np.asarray(gamma0, float).copy()
    a = np.asarray(a0, float).reshape(-1).copy()
    theta = np.asarray(theta0, float).reshape(-1).copy()
    theta /= np.linalg.norm(theta)
    n, p, d = data.n, data.p, data.d
    if gamma.size != (s + 1) * p or a.size != s:
        raise cpmodel.DimensionError("init shapes disagree with s")

    w = cpmodel.index_values(data, theta)
    smoothing = smoothing or SmoothingSpec(default_bandwidth(w, n))
    u = _encode_thresholds(a)

    objectives = []
    prev = None
    converged = False
    outer = 0
    objective = math.inf
    for outer in range(1, settings.max_outer_iter + 1):
        h = smoothing.at(outer - 1) if anneal else smoothing.h
        beta, deltas = gamma[:p], gamma[p:].reshape(s, p)
        if np.linalg.norm(deltas) > 1e-12:
            if d == 1:
                res = _threshold_step_only(data, beta, deltas, u, h, settings)
            else:
                res = _plane_step(data, beta, deltas, u, theta, h, settings)
                theta = res["theta"]
            u = res["extra"]
        a = _decode_thresholds(u)
        wth = cpmodel.index_values(data, theta)
        design = np.hstack(
            [data.x] + [data.x * smoothed_indicator(wth - ak, h)[:, None]
                        for ak in a])
        cd = cd_penalized_ls(design, data.y, penalty, settings=settings,
                             beta0=gamma)
        gamma = cd["beta"]
        resid = data.y - design @ gamma
        objective = float(resid @ resid) / n + float(
            np.sum(pen.penalty_value(penalty, gamma)))
        if track_objective:
            objectives.append(objective)
        at_final_h = (not anneal) or outer > smoothing.anneal_steps
        if at_final_h and prev is not None and \
                abs(prev - objective) <= settings.tol * (1.0 + abs(objective)):
            converged = True
            break
        if at_final_h:
            prev = objective

    # degenerate outcomes: collapsed spacings or empty groups drop to s - 1
    a = _decode_thresholds(u)
    gaps = np.diff(a)
    collapsed = np.where(gaps < 1e-8)[0]
    labels = cpmodel.group_labels(data, theta, cpmodel.Thresholds(a))
    counts = np.bincount(labels, minlength=s + 1)
    degenerate_k = None
    if collapsed.size:
        degenerate_k = int(collapsed[0]) + 1      # drop the upper twin
    elif np.any(counts == 0):
        degenerate_k = int(np.argmin(counts))     # drop a boundary of an empty group
        degenerate_k = min(max(degenerate_k, 1), s) - 1 + 1
    if degenerate_k is not None:
        if s == 1:
            raise RuntimeError("threshold collapsed with s = 1; no subgroup left")
        keep = [k for k in range(s) if k != degenerate_k - 1]
        beta, deltas = gamma[:p], gamma[p:].reshape(s, p)
        merged = deltas.copy()
        if degenerate_k < s:
            merged[degenerate_k] += merged[degenerate_k - 1]
        new_deltas = merged[keep]
        new_gamma = np.concatenate([beta, new_deltas.reshape(-1)])
        return refine_stage(data, s - 1, (new_gamma, a[keep], theta), penalty,
                            smoothing, settings, anneal=anneal,
                            track_objective=track_objective)

    beta, deltas = gamma[:p], gamma[p:].reshape(s, p)
    fit = cpmodel.make_fit(data, beta, deltas, a, theta, objective=objective,
                           converged=converged, iterations=outer,
                           lambda_used=penalty.lam, bandwidth=smoothing.h,
                           mode="mcpl")
    if track_objective:
        object.__setattr__(fit, "_objective_track", objectives)
    return fit


def _pilot_direction(data, settings):
    """Initial plane direction from a single-threshold pilot on (1, z)."""
    aug = cpmodel.Dataset(data.y, data.x, np.column_stack(
        [np.ones(data.n), data.z]))
    th_aug = initial_theta(aug, settings)
    direction = th_aug[1:]
    nrm = np.linalg.norm(direction)
    if nrm < 1e-8:
        direction = np.zeros(data.d)
        direction[0] = 1.0
        return direction
    return direction / nrm


def _null_fit(data, config, theta, stage_iterations):
    """No-subgroup fit: penalized least squares on x alone."""
    settings = config.settings
    grid = tuning.default_grid(
        tuning.lambda_max_scalar(data.x, data.y), criterion=config.select or tuning.BIC)

    def closure(lam, warm):
        res = cd_penalized_ls(data.x, data.y, config.penalty.with_lambda(lam),
                              settings=settings, beta0=warm)
        beta = res["beta"]
        r = data.y - data.x @ beta
        return {"result": (beta, float(r @ r)), "rss": float(r @ r),
                "df": int(np.count_nonzero(beta)), "n": data.n, "warm": beta}

    lam, (beta, rss), _ = tuning.select_lambda(closure, grid)
    return cpmodel.make_fit(
        data, beta, np.empty((0, data.p)), np.empty(0), theta,
        objective=rss / data.n + float(np.sum(pen.penalty_value(
            config.penalty.with_lambda(lam), beta))),
        converged=True, iterations=stage_iterations, lambda_used=lam,
        mode="mcpl", theta_identified=False)


def _smoothed_design(data, theta, a, h):
    w = cpmodel.index_values(data, theta)
    return np.hstack([data.x] + [data.x * smoothed_indicator(w - ak, h)[:, None]
                                 for ak in a])


def _gamma_path(data, design, spec_family, grid, settings):
    """BIC/GCV selection of lambda along a warm-started CD path at a fixed
    plane; returns (lambda, gamma)."""

    def closure(lam, warm):
        res = cd_penalized_ls(design, data.y, spec_family.with_lambda(lam),
                              settings=settings, beta0=warm)
        gamma = res["beta"]
        r = data.y - design @ gamma
        return {"result": gamma, "rss": float(r @ r),
                "df": int(np.count_nonzero(gamma)), "n": data.n,
                "warm": gamma}

    lam, gamma, _ = tuning.select_lambda(closure, grid)
    return lam, gamma


def _refine_selected(data, sr, theta, config, smoothing):
    """Refine at the split-stage s with the penalty level chosen on a path.

    The plane parameters are expensive to re-optimize per path point and a
    fully-penalized fit at large lambda has no identified plane at all, so the
    selection runs in three passes: a pilot joint refinement at the lambda
    picked on the initial smoothed design, a re-selection of lambda at the
    refined plane, and a final joint polish at the winning lambda.
    """
    settings = config.settings
    s = sr.s_hat
    a0 = np.sort(sr.init_thresholds)
    if np.any(np.diff(a0) <= 0):
        a0 = a0 + np.arange(s) * 1e-9

    if not config.select:
        design0 = _smoothed_design(data, theta, a0, smoothing.h)
        gamma0, *_ = np.linalg.lstsq(design0, data.y, rcond=None)
        return refine_stage(data, s, (gamma0, a0, theta), config.penalty,
                            smoothing, settings)

    design0 = _smoothed_design(data, theta, a0, smoothing.h)
    grid = config.refine_grid
    if grid is None:
        grid = tuning.default_grid(
            tuning.lambda_max_scalar(design0, data.y), criterion=config.select)
    lam0, gamma0 = _gamma_path(data, design0, config.penalty, grid, settings)
    fit1 = refine_stage(data, s, (gamma0, a0, theta),
                        config.penalty.with_lambda(lam0), smoothing, settings)

    design1 = _smoothed_design(data, fit1.theta.values, fit1.thresholds.a,
                               smoothing.h)
    lam1, gamma1 = _gamma_path(data, design1, config.penalty, grid, settings)
    if lam1 == fit1.lambda_used:
        return fit1
    return refine_stage(
        data, fit1.s, (gamma1, fit1.thresholds.a, fit1.theta.values),
        config.penalty.with_lambda(lam1), smoothing, settings, anneal=False)


def fit_mcpl(data, config=None):
    """Iterate splitting and refining until the threshold count repeats.

    With a single grouping covariate (d = 1) the plane direction is fixed at
    +1 and only the thresholds are estimated.  An estimated count of zero
    returns a no-subgroup penalized least-squares fit.  If the count keeps
    oscillating, the visited fit with the smallest BIC (df counting active
    coefficients plus s(d+1) plane parameters) is returned with
    ``converged=False``.
    """
    config = config or McplConfig()
    settings = config.settings
    n, p, d = data.n, data.p, data.d
    m = config.m or math.ceil(math.sqrt(n))
    if n < 2 * p * 2:
        raise ValueError("sample too small relative to the design")

    theta = np.ones(1) if d == 1 else _pilot_direction(data, settings)
    prev_s = None
    fit = None
    visited = []
    for stage in range(1, config.max_stage_iter + 1):
        sr = split_stage(data, theta, m, config.penalty, settings,
                         grid=config.split_grid)
        if sr.s_hat == prev_s and fit is not None:
            return fit
        if sr.s_hat == 0:
            return _null_fit(data, config, theta, stage)
        smoothing = config.smoothing or SmoothingSpec(
            default_bandwidth(cpmodel.index_values(data, theta), n))
        fit = _refine_selected(data, sr, theta, config, smoothing)
        visited.append((sr.s_hat, fit))
        theta = fit.theta.values
        prev_s = sr.s_hat

    # oscillation: keep the visited fit with the smallest across-s BIC
    def across_bic(f):
        df = int(np.count_nonzero(f.coeffs.flat())) + f.s * (d + 1)
        return tuning.bic_score(max(f.rss, 1e-300), n, df)

    best = min(visited, key=lambda t: across_bic(t[1]))[1]
    return cpmodel.ModelFit(best.coeffs, best.thresholds, best.theta,
                            best.labels, best.rss, best.objective, False,
                            best.iterations, best.lambda_used, best.bandwidth,
                            best.mode, best.theta_identified)
