"""Single-threshold change-plane fitter.

The model splits the sample at z' theta = 0 where z carries a leading
constant-1 column, so the plane offset is absorbed into theta.  Estimation
alternates a smoothed direction step with a penalized coordinate-descent
coefficient step until the penalized smoothed objective stabilizes.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from changeplane import model as cpmodel
from changeplane import penalties as pen
from changeplane import tuning
from changeplane.optimize import (OptimizerSettings, SmoothingSpec,
                                  cd_penalized_ls, default_bandwidth,
                                  smoothed_gradient, smoothed_indicator,
                                  smoothed_objective, sphere_optimize)


@dataclass(frozen=True)
class ScplConfig:
    penalty: pen.PenaltySpec = pen.PenaltySpec()
    smoothing: SmoothingSpec = None      # None -> sd(W) * n**-0.7
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    grid: tuning.TuningGrid = None       # None -> default path when selecting
    select: str = tuning.BIC             # None/"" -> fit at penalty.lam as given


def _random_unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _theta_step(data, beta, deltas, a, theta, h, settings):
    coeffs = (beta, deltas)

    def f(th):
        return smoothed_objective(data, coeffs, a, th, h)

    def g(th):
        return smoothed_gradient(data, coeffs, a, th, h)[2]

    return sphere_optimize(f, g, theta, settings)


def initial_theta(data, settings, multistarts=None, rng=None):
    """Step-0 direction: average of multistart winners from a coarse pilot.

    Starts combine random unit vectors with a data-driven one (z regressed on
    the sign of the plain least-squares residual); each start gets a cheap
    smoothed fit at the wide pilot bandwidth sd(W) * n**-0.3 and the winners
    (within 5% of the best objective) are sign-aligned and averaged.
    """
    rng = rng or np.random.default_rng(settings.seed)
    n, d = data.n, data.d
    multistarts = settings.multistarts if multistarts is None else multistarts

    coef, *_ = np.linalg.lstsq(data.x, data.y, rcond=None)
    resid = data.y - data.x @ coef
    starts = []
    dd, *_ = np.linalg.lstsq(data.z, np.sign(resid), rcond=None)
    if np.linalg.norm(dd) > 1e-12:
        starts.append(dd / np.linalg.norm(dd))
    starts.extend(_random_unit(rng, d) for _ in range(multistarts))

    h_pilot = float(np.std(data.z @ starts[0]) or 1.0) * n ** -0.3
    pilot_settings = OptimizerSettings(max_inner_iter=60, tol=1e-4,
                                       seed=settings.seed)
    trials = []
    for th in starts:
        w = data.z @ th
        design = np.hstack([data.x, data.x * smoothed_indicator(w, h_pilot)[:, None]])
        gamma, *_ = np.linalg.lstsq(design, data.y, rcond=None)
        beta, delta = gamma[: data.p], gamma[data.p:]
        res = _theta_step(data, beta, delta[None, :], np.zeros(1), th,
                          h_pilot, pilot_settings)
        trials.append((res["value"], res["theta"]))
    best_val = min(v for v, _ in trials)
    best_th = next(th for v, th in trials if v == best_val)
    keep = [th for v, th in trials if v <= best_val + 0.05 * abs(best_val) + 1e-12]
    aligned = [th if th @ best_th >= 0 else -th for th in keep]
    avg = np.mean(aligned, axis=0)
    if np.linalg.norm(avg) < 1e-8:
        avg = best_th
    return avg / np.linalg.norm(avg)


def _alternate(data, spec, smoothing, settings, theta0, gamma0=None, anneal=True):
    """Alternate the theta-step and the penalized gamma-step at fixed lambda."""
    n, p = data.n, data.p
    theta = np.asarray(theta0, float) / np.linalg.norm(theta0)
    a = np.zeros(1)

    if gamma0 is None:
        w = data.z @ theta
        h0 = smoothing.at(0) if anneal else smoothing.h
        design = np.hstack([data.x, data.x * smoothed_indicator(w, h0)[:, None]])
        gamma, *_ = np.linalg.lstsq(design, data.y, rcond=None)
    else:
        gamma = np.asarray(gamma0, float).copy()

    prev = None
    converged = False
    outer = 0
    objective = math.inf
    for outer in range(1, settings.max_outer_iter + 1):
        h = smoothing.at(outer - 1) if anneal else smoothing.h
        beta, delta = gamma[:p], gamma[p:]
        identified = float(np.linalg.norm(delta)) > 1e-12
        if identified:
            res = _theta_step(data, beta, delta[None, :], a, theta, h, settings)
            theta = res["theta"]
        w = data.z @ theta
        design = np.hstack([data.x, data.x * smoothed_indicator(w, h)[:, None]])
        cd = cd_penalized_ls(design, data.y, spec, settings=settings, beta0=gamma)
        gamma = cd["beta"]
        resid = data.y - design @ gamma
        objective = float(resid @ resid) / n + float(
            np.sum(pen.penalty_value(spec, gamma)))
        at_final_h = (not anneal) or outer > smoothing.anneal_steps
        if at_final_h and prev is not None and \
                abs(prev - objective) <= settings.tol * (1.0 + abs(objective)):
            converged = True
            break
        if at_final_h:
            prev = objective
    return {"gamma": gamma, "theta": theta, "objective": objective,
            "converged": converged, "iterations": outer}


def _as_fit(data, state, spec, h):
    p = data.p
    gamma, theta = state["gamma"], state["theta"]
    beta, delta = gamma[:p], gamma[p:]
    identified = float(np.linalg.norm(delta)) > 1e-12
    return cpmodel.make_fit(
        data, beta, delta[None, :], np.zeros(1), theta,
        objective=state["objective"], converged=state["converged"],
        iterations=state["iterations"], lambda_used=spec.lam, bandwidth=h,
        mode="scpl", theta_identified=identified)


def fit_scpl(data, config=None):
    """Fit the single-threshold change-plane model.

    Requires a leading constant-1 column in ``data.z`` and n > 2p.  When
    ``config.select`` is set (default BIC) the penalty level is chosen along a
    warm-started path; otherwise ``config.penalty.lam`` is used as given.
    Returns a :class:`~changeplane.model.ModelFit` with one threshold fixed
    at zero.
    """
    config = config or ScplConfig()
    settings = config.settings
    if not np.allclose(data.z[:, 0], 1.0):
        raise ValueError("SCPL mode needs a constant-1 leading column in z")
    if data.n <= 2 * data.p:
        raise ValueError("need n > 2p observations")

    theta0 = initial_theta(data, settings)
    smoothing = config.smoothing or SmoothingSpec(
        default_bandwidth(data.z @ theta0, data.n))

    if not config.select:
        state = _alternate(data, config.penalty, smoothing, settings, theta0)
        return _as_fit(data, state, config.penalty, smoothing.h)

    grid = config.grid
    if grid is None:
        w = data.z @ theta0
        design0 = np.hstack([data.x,
                             data.x * smoothed_indicator(w, smoothing.h)[:, None]])
        grid = tuning.default_grid(
            tuning.lambda_max_scalar(design0, data.y), criterion=config.select)

    def closure(lam, warm):
        spec = config.penalty.with_lambda(lam)
        if warm is None:
            state = _alternate(data, spec, smoothing, settings, theta0)
        else:
            state = _alternate(data, spec, smoothing, settings,
                               warm["theta"], warm["gamma"], anneal=False)
        fit = _as_fit(data, state, spec, smoothing.h)
        return {"result": fit, "rss": fit.rss,
                "df": int(np.count_nonzero(state["gamma"])), "n": data.n,
                "warm": {"theta": state["theta"], "gamma": state["gamma"]}}

    _, best_fit, _ = tuning.select_lambda(closure, grid)
    return best_fit
