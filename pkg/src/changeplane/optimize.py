"""Smoothed objectives, their analytic gradients, and the numerical solvers.

Three solvers live here:

* ``sphere_optimize`` - monotone spectral projected gradient (BB steps with an
  Armijo backtracking line search) over the unit sphere, optionally coupled
  with unconstrained extra coordinates.  Used for the plane direction and,
  in the refining stage, jointly with the reparameterized thresholds.
* ``cd_penalized_ls`` - cyclic coordinate descent with exact scalar SCAD/MC+
  updates.
* ``gcd_penalized_ls`` - group coordinate descent with an exact update for the
  unpenalized baseline block and majorize-minimize prox steps for the
  penalized increment blocks.

The per-sweep inner loops of the last two are delegated to the selected
kernel backend (compiled or NumPy).
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from changeplane import backend as _backend
from changeplane import model as cpmodel
from changeplane import penalties as pen

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SmoothingSpec:
    """Bandwidth of the normal-CDF indicator approximation.

    ``anneal_factor``/``anneal_steps`` control a geometric warm-up: the first
    outer iteration runs at ``h / anneal_factor**anneal_steps`` (8h by
    default), shrinking down to ``h`` to widen the basins early on.
    """

    h: float
    anneal_factor: float = 0.5
    anneal_steps: int = 3

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bandwidth h must be positive")
        if not 0 < self.anneal_factor <= 1:
            raise ValueError("anneal_factor must lie in (0, 1]")

    def at(self, outer_iter):
        """Bandwidth used at the given outer iteration (annealing schedule)."""
        k = max(self.anneal_steps - outer_iter, 0)
        return self.h / self.anneal_factor ** k


def default_bandwidth(w, n=None):
    """sd(W) * n**-0.7, the rate-compatible default (n h^2 -> 0)."""
    w = np.asarray(w, float)
    if n is None:
        n = w.size
    sd = float(np.std(w))
    if sd <= 0:
        sd = 1.0
    return sd * float(n) ** -0.7


@dataclass(frozen=True)
class OptimizerSettings:
    max_outer_iter: int = 50
    max_inner_iter: int = 300
    tol: float = 1e-6
    cd_tol: float = 1e-7
    cd_max_sweeps: int = 10000
    multistarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0 or self.cd_tol <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_outer_iter, self.max_inner_iter, self.cd_max_sweeps, 1) < 1:
            raise ValueError("iteration counts must be >= 1")


def smoothed_indicator(w, h):
    """Phi(w / h): smooth stand-in for 1(w > 0)."""
    if h <= 0:
        raise ValueError("bandwidth h must be positive")
    return ndtr(np.asarray(w, float) / h)


def _h_of(smoothing):
    return smoothing.h if isinstance(smoothing, SmoothingSpec) else float(smoothing)


def _resid_parts(data, beta, deltas, a, theta, h):
    """Residual of the smoothed model plus reusable intermediates."""
    w = data.z @ np.asarray(theta, float)
    s = len(a)
    if s == 0:
        resid = data.y - data.x @ beta
        return resid, w, None, None
    t = (w[:, None] - np.asarray(a, float)[None, :]) / h
    phi_cdf = ndtr(t)
    xd = data.x @ np.asarray(deltas, float).T  # (n, s): x_i' delta_k
    resid = data.y - data.x @ beta - (xd * phi_cdf).sum(axis=1)
    return resid, w, t, xd


def smoothed_objective(data, coeffs, a, theta, smoothing):
    """Mean squared residual with indicators replaced by Phi((W - a_k)/h)."""
    h = _h_of(smoothing)
    if h <= 0:
        raise ValueError("bandwidth h must be positive")
    beta = coeffs.beta if isinstance(coeffs, cpmodel.CoefficientSet) else np.asarray(coeffs[0], float)
    deltas = coeffs.deltas if isinstance(coeffs, cpmodel.CoefficientSet) else np.asarray(coeffs[1], float)
    a = a.a if isinstance(a, cpmodel.Thresholds) else np.atleast_1d(np.asarray(a, float))
    theta = theta.values if isinstance(theta, cpmodel.ThetaVector) else theta
    resid, _, _, _ = _resid_parts(data, beta, deltas, a, theta, h)
    return float(resid @ resid) / data.n


def smoothed_gradient(data, coeffs, a, theta, smoothing):
    """Analytic gradient of ``smoothed_objective`` over (gamma, a, theta).

    Returns ``(g_gamma, g_a, g_theta)`` where g_gamma stacks the beta block
    and the delta blocks in cumulative order.
    """
    h = _h_of(smoothing)
    beta = coeffs.beta if isinstance(coeffs, cpmodel.CoefficientSet) else np.asarray(coeffs[0], float)
    deltas = coeffs.deltas if isinstance(coeffs, cpmodel.CoefficientSet) else np.asarray(coeffs[1], float)
    a = a.a if isinstance(a, cpmodel.Thresholds) else np.atleast_1d(np.asarray(a, float))
    theta = theta.values if isinstance(theta, cpmodel.ThetaVector) else np.asarray(theta, float)
    n = data.n
    resid, w, t, xd = _resid_parts(data, beta, deltas, a, theta, h)
    s = len(a)
    g_beta = -(2.0 / n) * (data.x.T @ resid)
    if s == 0:
        return g_beta, np.empty(0), np.zeros(data.d)
    phi_cdf = ndtr(t)
    phi_pdf = np.exp(-0.5 * t * t) / _SQRT2PI
    g_deltas = -(2.0 / n) * (data.x.T @ (resid[:, None] * phi_cdf))  # (p, s)
    g_gamma = np.concatenate([g_beta, g_deltas.T.reshape(-1)])
    g_a = (2.0 / (n * h)) * ((resid[:, None] * xd * phi_pdf).sum(axis=0))
    mix = (xd * phi_pdf).sum(axis=1)  # sum_k x'delta_k phi_ik
    g_theta = -(2.0 / (n * h)) * (data.z.T @ (resid * mix))
    return g_gamma, g_a, g_theta


def _project_tangent(g, theta):
    return g - float(g @ theta) * theta


def sphere_optimize(objective, gradient, theta0, settings, extra0=None,
                    positive_index=None):
    """Minimize a smooth function of a unit vector (plus optional free extras).

    Parameters
    ----------
    objective, gradient : callables
        With ``extra0`` given they take ``(theta, extra)``; otherwise just
        ``theta``.  ``gradient`` must return the matching Euclidean gradient
        (a pair when extras are present).
    theta0 : array, unit norm
    settings : OptimizerSettings
    extra0 : optional array of unconstrained coordinates optimized jointly.
    positive_index : optional coordinate forced positive; the sign flip is
        only applied when it does not increase the objective.

    Returns a dict with keys ``theta``, ``extra``, ``value``, ``iterations``,
    ``converged``.
    """
    theta = np.asarray(theta0, float).copy()
    nrm = np.linalg.norm(theta)
    if nrm == 0:
        raise ValueError("theta0 must be nonzero")
    theta /= nrm
    has_extra = extra0 is not None
    extra = np.asarray(extra0, float).copy() if has_extra else np.empty(0)

    if has_extra:
        f = lambda th, ex: float(objective(th, ex))
        g = lambda th, ex: gradient(th, ex)
    else:
        f = lambda th, ex: float(objective(th))
        g = lambda th, ex: (gradient(th), np.empty(0))

    if theta.size == 1 and positive_index is not None:
        # the admissible set is the single point +1
        theta = np.array([1.0])
        val = f(theta, extra)
        if not math.isfinite(val):
            raise ValueError("objective is not finite at the start")
        return {"theta": theta, "extra": extra, "value": val,
                "iterations": 0, "converged": True}

    fx = f(theta, extra)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the start")
    g_th, g_ex = g(theta, extra)
    pg = _project_tangent(np.asarray(g_th, float), theta)
    g_ex = np.asarray(g_ex, float)

    step = 1.0 / max(1.0, math.sqrt(float(pg @ pg) + float(g_ex @ g_ex)))
    converged = False
    it = 0
    for it in range(1, settings.max_inner_iter + 1):
        gnorm2 = float(pg @ pg) + float(g_ex @ g_ex)
        if math.sqrt(gnorm2) <= settings.tol * (1.0 + abs(fx)):
            converged = True
            break
        t = step
        accepted = False
        for _ in range(60):
            th_new = theta - t * pg
            th_new /= np.linalg.norm(th_new)
            ex_new = extra - t * g_ex
            f_new = f(th_new, ex_new)
            if math.isfinite(f_new) and f_new <= fx - 1e-4 * t * gnorm2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True  # no descent along the projected gradient
            break
        g_th_new, g_ex_new = g(th_new, ex_new)
        pg_new = _project_tangent(np.asarray(g_th_new, float), th_new)
        g_ex_new = np.asarray(g_ex_new, float)
        s_th, s_ex = th_new - theta, ex_new - extra
        y_th, y_ex = pg_new - pg, g_ex_new - g_ex
        ss = float(s_th @ s_th) + float(s_ex @ s_ex)
        sy = float(s_th @ y_th) + float(s_ex @ y_ex)
        step = min(max(ss / sy, 1e-12), 1e12) if sy > 1e-30 else min(2.0 * t, 1e12)
        drop = fx - f_new
        theta, extra, fx, pg, g_ex = th_new, ex_new, f_new, pg_new, g_ex_new
        if drop <= settings.tol * (1.0 + abs(fx)) * 1e-3:
            converged = True
            break

    if positive_index is not None and theta[positive_index] < 0:
        f_flip = f(-theta, extra)
        if f_flip <= fx + 1e-12 * (1.0 + abs(fx)):
            theta, fx = -theta, f_flip
    return {"theta": theta, "extra": extra, "value": fx,
            "iterations": it, "converged": converged}


def _penalty_total(spec, beta, mask):
    if spec.lam == 0:
        return 0.0
    return float(np.sum(pen.penalty_value(spec, beta[mask])))


def cd_penalized_ls(design, y, spec, penalize_mask=None, settings=None,
                    beta0=None, track_objective=False, kernels=None):
    """Penalized least squares (1/n)||y - X b||^2 + sum_j p(|b_j|) by cyclic CD.

    ``penalize_mask`` flags the penalized coefficients (all by default);
    unpenalized coordinates get plain exact least-squares updates.  Returns a
    dict with ``beta``, ``sweeps``, ``converged`` and, when tracked, the
    per-sweep penalized ``objectives``.
    """
    settings = settings or OptimizerSettings()
    kern = kernels or _backend.kernels
    design = np.asarray(design, float)
    y = np.asarray(y, float).reshape(-1)
    n, q = design.shape
    xt = np.ascontiguousarray(design.T)
    col_nrm2 = np.einsum("ij,ij->i", xt, xt)
    if penalize_mask is None:
        penalize_mask = np.ones(q, dtype=bool)
    penalized = np.ascontiguousarray(penalize_mask, dtype=np.uint8)
    if np.any((col_nrm2 <= 0) & (penalized == 0)):
        raise np.linalg.LinAlgError("unpenalized column with zero norm")
    beta = np.zeros(q) if beta0 is None else np.asarray(beta0, float).copy()
    r = y - design @ beta

    pmask = penalized.astype(bool)
    objectives = []
    converged = False
    sweeps = 0
    for sweeps in range(1, settings.cd_max_sweeps + 1):
        delta = kern.cd_sweep(xt, col_nrm2, r, beta, penalized,
                              spec.code, spec.lam, spec.nu)
        if sweeps % 4 == 0 and delta >= settings.cd_tol:
            _active_refit(design, y, beta, r, n,
                          lambda b: _penalty_total(spec, b, pmask),
                          (beta != 0) | ~pmask)
        if track_objective:
            objectives.append(float(r @ r) / n + _penalty_total(spec, beta, pmask))
        if delta < settings.cd_tol:
            converged = True
            break
    out = {"beta": beta, "sweeps": sweeps, "converged": converged}
    if track_objective:
        out["objectives"] = objectives
    return out


def _active_refit(design, y, beta, r, n, penalty_of, active_cols):
    """Joint least-squares refit of the active coefficients, kept only when it
    lowers the penalized objective.  Pure acceleration: coordinate and block
    prox steps crawl on collinear designs once the active set has settled."""
    idx = np.flatnonzero(active_cols)
    if idx.size == 0 or idx.size >= y.size:
        return
    sol, *_ = np.linalg.lstsq(design[:, idx], y, rcond=None)
    cand = np.zeros_like(beta)
    cand[idx] = sol
    r_cand = y - design[:, idx] @ sol
    cur = float(r @ r) / n + penalty_of(beta)
    new = float(r_cand @ r_cand) / n + penalty_of(cand)
    if new < cur:
        beta[:] = cand
        r[:] = r_cand


def _block_slices(sizes):
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(edges[j], edges[j + 1]) for j in range(len(sizes))]


def gcd_penalized_ls(design, y, block_sizes, spec, settings=None, beta0=None,
                     row_starts=None, track_objective=False, kernels=None):
    """Group-penalized least squares: first block free, p(||delta_j||) on the rest.

    ``row_starts`` may mark the first nonzero row of each block column group
    (the splitting-stage design is lower staircase shaped), which the sweep
    kernels use to skip structural zeros.
    """
    settings = settings or OptimizerSettings()
    kern = kernels or _backend.kernels
    design = np.asarray(design, float)
    y = np.asarray(y, float).reshape(-1)
    n, q = design.shape
    sizes = np.ascontiguousarray(block_sizes, dtype=np.int64)
    if sizes.sum() != q:
        raise cpmodel.DimensionError("block sizes do not partition the columns")
    xt = np.ascontiguousarray(design.T)
    if row_starts is None:
        row_starts = np.zeros(len(sizes), dtype=np.int64)
    row_starts = np.ascontiguousarray(row_starts, dtype=np.int64)

    sl = _block_slices(sizes)
    lips = np.empty(len(sizes))
    gram0 = None
    for j, s_j in enumerate(sl):
        xj = xt[s_j]
        gram = xj @ xj.T
        evals = np.linalg.eigvalsh(gram)
        lips[j] = 2.0 * max(float(evals[-1]), 1e-300) / n
        if j == 0:
            if evals[0] <= 1e-12 * max(evals[-1], 1.0):
                raise np.linalg.LinAlgError("singular unpenalized block")
            gram0 = np.linalg.inv(gram)

    beta = np.zeros(q) if beta0 is None else np.asarray(beta0, float).copy()
    r = y - design @ beta

    def group_penalty(b):
        if spec.lam == 0:
            return 0.0
        return sum(float(pen.penalty_value(
            spec, math.sqrt(float(b[s_j] @ b[s_j])))) for s_j in sl[1:])

    objectives = []
    converged = False
    sweeps = 0
    for sweeps in range(1, settings.cd_max_sweeps + 1):
        delta = kern.gcd_sweep(xt, r, beta, sizes, row_starts, lips, gram0,
                               spec.code, spec.lam, spec.nu)
        if sweeps % 4 == 0 and delta >= settings.cd_tol:
            active = np.zeros(q, dtype=bool)
            active[sl[0]] = True
            for s_j in sl[1:]:
                if np.any(beta[s_j] != 0):
                    active[s_j] = True
            _active_refit(design, y, beta, r, n, group_penalty, active)
        if track_objective:
            objectives.append(float(r @ r) / n + group_penalty(beta))
        if delta < settings.cd_tol:
            converged = True
            break
    out = {"beta": beta, "sweeps": sweeps, "converged": converged,
           "block_slices": sl}
    if track_objective:
        out["objectives"] = objectives
    return out
