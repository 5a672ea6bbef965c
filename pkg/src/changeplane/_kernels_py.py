"""NumPy implementation of the coordinate-descent sweep kernels.

This is the fallback backend used when the compiled extension is unavailable
(or when CHANGEPLANE_PURE_PYTHON is set).  Semantics match
``changeplane._kernels`` exactly; the compiled module only makes the sweeps
faster.

Design matrices are passed transposed (``xt`` has one contiguous row per
design column) so that column access is cache friendly in both backends.
The residual ``r = y - X @ beta`` is maintained in place across sweeps.
"""
import math

import numpy as np

COMPILED = False


def _prox(family, u, w, lam, nu):
    # exact minimizer of w/2 (u-b)^2 + p_lam(|b|); family 0 = SCAD, 1 = MC+
    if lam == 0.0:
        return u
    sign = -1.0 if u < 0.0 else 1.0
    u = abs(u)
    if family == 0:
        cands = [0.0, lam, nu * lam]
        b = u - lam / w
        if 0.0 <= b <= lam:
            cands.append(b)
        den = w * (nu - 1.0) - 1.0
        if den > 0.0:
            b = (w * u * (nu - 1.0) - nu * lam) / den
            if lam <= b <= nu * lam:
                cands.append(b)
        if u >= nu * lam:
            cands.append(u)
    else:
        cands = [0.0, nu * lam]
        den = w - 1.0 / nu
        if den > 0.0:
            b = (w * u - lam) / den
            if 0.0 <= b <= nu * lam:
                cands.append(b)
        if u >= nu * lam:
            cands.append(u)

    best = 0.0
    best_val = math.inf
    for b in cands:
        t = abs(b)
        if family == 0:
            if t <= lam:
                pen = lam * t
            elif t <= nu * lam:
                pen = (2.0 * nu * lam * t - t * t - lam * lam) / (2.0 * (nu - 1.0))
            else:
                pen = lam * lam * (nu + 1.0) / 2.0
        else:
            if t <= nu * lam:
                pen = lam * t - t * t / (2.0 * nu)
            else:
                pen = nu * lam * lam / 2.0
        val = 0.5 * w * (u - b) * (u - b) + pen
        if val < best_val - 1e-18 or (val <= best_val and b > best):
            best, best_val = b, val
    return sign * best


def cd_sweep(xt, col_nrm2, r, beta, penalized, family, lam, nu):
    """One cyclic pass of exact scalar coordinate updates; returns max |change|."""
    n = r.shape[0]
    delta = 0.0
    for j in range(beta.shape[0]):
        nj = col_nrm2[j]
        if nj <= 0.0:
            continue
        xj = xt[j]
        u = beta[j] + float(xj @ r) / nj
        if penalized[j] and lam > 0.0:
            bnew = _prox(family, u, 2.0 * nj / n, lam, nu)
        else:
            bnew = u
        diff = bnew - beta[j]
        if diff != 0.0:
            r -= diff * xj
            beta[j] = bnew
            if abs(diff) > delta:
                delta = abs(diff)
    return delta


def gcd_sweep(xt, r, beta, sizes, row_starts, lips, ginv0, family, lam, nu):
    """One block-cyclic pass: exact update for the unpenalized first block,
    one majorize-minimize prox step for each penalized block.
    Returns the max Euclidean norm of a block change."""
    n = r.shape[0]
    delta = 0.0
    c0 = 0
    for j in range(sizes.shape[0]):
        pj = sizes[j]
        c1 = c0 + pj
        rs = row_starts[j]
        xj = xt[c0:c1, rs:]
        bold = beta[c0:c1].copy()
        if j == 0 and ginv0 is not None:
            step = ginv0 @ (xj @ r[rs:])
            bnew = bold + step
        else:
            lj = lips[j]
            u = bold + (xj @ r[rs:]) * (2.0 / (n * lj))
            nrm = math.sqrt(float(u @ u))
            if lam > 0.0:
                t = _prox(family, nrm, lj, lam, nu)
            else:
                t = nrm
            bnew = (t / nrm) * u if nrm > 0.0 and t != 0.0 else np.zeros(pj)
        chg = bnew - bold
        nchg = math.sqrt(float(chg @ chg))
        if nchg > 0.0:
            r[rs:] -= chg @ xj
            beta[c0:c1] = bnew
            if nchg > delta:
                delta = nchg
        c0 = c1
    return delta
