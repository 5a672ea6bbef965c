# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled coordinate-descent sweep kernels.

Same contract as ``changeplane._kernels_py``; see that module for the
reference semantics.  One call performs one full cyclic sweep and returns the
largest coefficient (or block-norm) change, with the residual maintained in
place.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()

COMPILED = True


cdef inline double _penalty(int family, double t, double lam, double nu) nogil:
    t = fabs(t)
    if family == 0:
        if t <= lam:
            return lam * t
        elif t <= nu * lam:
            return (2.0 * nu * lam * t - t * t - lam * lam) / (2.0 * (nu - 1.0))
        return lam * lam * (nu + 1.0) / 2.0
    else:
        if t <= nu * lam:
            return lam * t - t * t / (2.0 * nu)
        return nu * lam * lam / 2.0


cdef inline double _prox(int family, double u, double w, double lam, double nu) nogil:
    cdef double sign = 1.0
    cdef double cands[6]
    cdef int ncand = 0
    cdef double den, b, val, best, best_val
    cdef int i
    if lam == 0.0:
        return u
    if u < 0.0:
        sign = -1.0
        u = -u
    if family == 0:
        cands[ncand] = 0.0; ncand += 1
        cands[ncand] = lam; ncand += 1
        cands[ncand] = nu * lam; ncand += 1
        b = u - lam / w
        if 0.0 <= b <= lam:
            cands[ncand] = b; ncand += 1
        den = w * (nu - 1.0) - 1.0
        if den > 0.0:
            b = (w * u * (nu - 1.0) - nu * lam) / den
            if lam <= b <= nu * lam:
                cands[ncand] = b; ncand += 1
        if u >= nu * lam:
            cands[ncand] = u; ncand += 1
    else:
        cands[ncand] = 0.0; ncand += 1
        cands[ncand] = nu * lam; ncand += 1
        den = w - 1.0 / nu
        if den > 0.0:
            b = (w * u - lam) / den
            if 0.0 <= b <= nu * lam:
                cands[ncand] = b; ncand += 1
        if u >= nu * lam:
            cands[ncand] = u; ncand += 1
    best = 0.0
    best_val = INFINITY
    for i in range(ncand):
        b = cands[i]
        val = 0.5 * w * (u - b) * (u - b) + _penalty(family, b, lam, nu)
        if val < best_val - 1e-18 or (val <= best_val and b > best):
            best = b
            best_val = val
    return sign * best


def cd_sweep(double[:, ::1] xt, double[::1] col_nrm2, double[::1] r,
             double[::1] beta, unsigned char[::1] penalized,
             int family, double lam, double nu):
    """One cyclic pass of exact scalar coordinate updates; returns max |change|."""
    cdef Py_ssize_t q = beta.shape[0]
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t j, i
    cdef double delta = 0.0
    cdef double nj, dot, u, bnew, diff
    with nogil:
        for j in range(q):
            nj = col_nrm2[j]
            if nj <= 0.0:
                continue
            dot = 0.0
            for i in range(n):
                dot += xt[j, i] * r[i]
            u = beta[j] + dot / nj
            if penalized[j] and lam > 0.0:
                bnew = _prox(family, u, 2.0 * nj / n, lam, nu)
            else:
                bnew = u
            diff = bnew - beta[j]
            if diff != 0.0:
                for i in range(n):
                    r[i] -= diff * xt[j, i]
                beta[j] = bnew
                if fabs(diff) > delta:
                    delta = fabs(diff)
    return delta


def gcd_sweep(double[:, ::1] xt, double[::1] r, double[::1] beta,
              long long[::1] sizes, long long[::1] row_starts,
              double[::1] lips, object ginv0,
              int family, double lam, double nu):
    """One block-cyclic pass (exact first block, MM prox steps elsewhere)."""
    cdef Py_ssize_t nb = sizes.shape[0]
    cdef Py_ssize_t n = r.shape[0]
    cdef double[:, ::1] g0 = ginv0 if ginv0 is not None else None
    cdef bint have_g0 = ginv0 is not None
    cdef Py_ssize_t j, k, i, c0, c1, rs, pj
    cdef double delta = 0.0
    cdef double lj, nrm, t, scale, nchg, chg
    # scratch buffers sized to the largest block
    cdef Py_ssize_t pmax = 0
    for j in range(nb):
        if sizes[j] > pmax:
            pmax = sizes[j]
    cdef double[::1] grad = np.empty(pmax)
    cdef double[::1] bnew = np.empty(pmax)
    with nogil:
        c0 = 0
        for j in range(nb):
            pj = sizes[j]
            c1 = c0 + pj
            rs = row_starts[j]
            # grad[k] = x_k' r over the structurally nonzero rows
            for k in range(pj):
                grad[k] = 0.0
                for i in range(rs, n):
                    grad[k] += xt[c0 + k, i] * r[i]
            if j == 0 and have_g0:
                for k in range(pj):
                    bnew[k] = beta[c0 + k]
                    for i in range(pj):
                        bnew[k] += g0[k, i] * grad[i]
            else:
                lj = lips[j]
                nrm = 0.0
                for k in range(pj):
                    grad[k] = beta[c0 + k] + grad[k] * (2.0 / (n * lj))
                    nrm += grad[k] * grad[k]
                nrm = sqrt(nrm)
                if lam > 0.0:
                    t = _prox(family, nrm, lj, lam, nu)
                else:
                    t = nrm
                if nrm > 0.0 and t != 0.0:
                    scale = t / nrm
                    for k in range(pj):
                        bnew[k] = scale * grad[k]
                else:
                    for k in range(pj):
                        bnew[k] = 0.0
            nchg = 0.0
            for k in range(pj):
                chg = bnew[k] - beta[c0 + k]
                nchg += chg * chg
            nchg = sqrt(nchg)
            if nchg > 0.0:
                for k in range(pj):
                    chg = bnew[k] - beta[c0 + k]
                    if chg != 0.0:
                        for i in range(rs, n):
                            r[i] -= chg * xt[c0 + k, i]
                    beta[c0 + k] = bnew[k]
                if nchg > delta:
                    delta = nchg
            c0 = c1
    return delta
