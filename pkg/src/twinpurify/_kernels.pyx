# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_kernels_py``; same signatures."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def cox_breslow(X, time, event, beta, want_hessian=True):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Xa = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.ascontiguousarray(time, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ea = np.ascontiguousarray(np.asarray(event).astype(bool), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ba = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t n = Xa.shape[0], p = Xa.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(-ta, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] eta = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] hess = np.zeros((p, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s1 = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s2 = np.zeros((p, p))
    cdef bint hes = bool(want_hessian)
    cdef Py_ssize_t i, j, a, b, k, start, stop, r
    cdef double shift = -1e300, s0 = 0.0, loglik = 0.0, w, xa, m_a, m_b
    cdef double t
    cdef long n_ev
    for i in range(n):
        w = 0.0
        for a in range(p):
            w += Xa[i, a] * ba[a]
        eta[i] = w
        if w > shift:
            shift = w
    start = 0
    while start < n:
        # tie group [start, stop) in descending-time order
        t = ta[order[start]]
        stop = start
        while stop < n and ta[order[stop]] == t:
            r = order[stop]
            w = exp(eta[r] - shift)
            s0 += w
            for a in range(p):
                xa = Xa[r, a]
                s1[a] += w * xa
                if hes:
                    for b in range(a + 1):
                        s2[a, b] += w * xa * Xa[r, b]
            stop += 1
        n_ev = 0
        for k in range(start, stop):
            r = order[k]
            if ea[r]:
                n_ev += 1
                loglik += eta[r]
                for a in range(p):
                    grad[a] += Xa[r, a]
        if n_ev:
            loglik -= n_ev * (log(s0) + shift)
            for a in range(p):
                m_a = s1[a] / s0
                grad[a] -= n_ev * m_a
                if hes:
                    for b in range(a + 1):
                        m_b = s1[b] / s0
                        hess[a, b] -= n_ev * (s2[a, b] / s0 - m_a * m_b)
        start = stop
    if not hes:
        return float(loglik), grad, None
    for a in range(p):
        for b in range(a):
            hess[b, a] = hess[a, b]
    return float(loglik), grad, hess


def concordance_counts(time, event, scores):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.ascontiguousarray(time, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ea = np.ascontiguousarray(np.asarray(event).astype(bool), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sa = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = ta.shape[0], i, j
    cdef long long conc = 0, tied = 0, adm = 0
    for i in range(n):
        if not ea[i]:
            continue
        for j in range(n):
            if ta[i] < ta[j]:
                adm += 1
                if sa[i] > sa[j]:
                    conc += 1
                elif sa[i] == sa[j]:
                    tied += 1
    return int(conc), int(tied), int(adm)


def unique_fractions(members, offsets, Py_ssize_t n_universe):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] mem = np.ascontiguousarray(members, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(n_universe, dtype=np.int64)
    cdef Py_ssize_t k = off.shape[0] - 1, s, i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(k)
    cdef long single
    for i in range(mem.shape[0]):
        counts[mem[i]] += 1
    for s in range(k):
        single = 0
        for i in range(off[s], off[s + 1]):
            if counts[mem[i]] == 1:
                single += 1
        out[s] = single / <double>(off[s + 1] - off[s]) if off[s + 1] > off[s] else 0.0
    return out


def risk_table(time, event, grid):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.ascontiguousarray(time, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ea = np.ascontiguousarray(np.asarray(event).astype(bool), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t n = ta.shape[0], m = ga.shape[0], i, j, k
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(ta, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gorder = np.argsort(ga, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] at_risk = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] events = np.zeros(m, dtype=np.int64)
    cdef double g
    i = 0
    # sweep grid and sorted times together
    for k in range(m):
        g = ga[gorder[k]]
        while i < n and ta[order[i]] < g:
            i += 1
        at_risk[gorder[k]] = n - i
        j = i
        while j < n and ta[order[j]] == g:
            if ea[order[j]]:
                events[gorder[k]] += 1
            j += 1
    return at_risk, events


def adam_update(cnp.ndarray p, cnp.ndarray g, cnp.ndarray m, cnp.ndarray v,
                double lr, double b1, double b2, double c1, double c2, double eps, tmp=None):
    if not (p.flags.c_contiguous and g.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update needs C-contiguous arrays")
    if not (p.dtype == np.float64 and g.dtype == np.float64 and m.dtype == np.float64 and v.dtype == np.float64):
        raise ValueError("adam_update needs float64 arrays")
    cdef Py_ssize_t n = p.size, i
    if g.size != n or m.size != n or v.size != n:
        raise ValueError("adam_update arrays differ in size")
    cdef double *pp = <double *> cnp.PyArray_DATA(p)
    cdef double *gp = <double *> cnp.PyArray_DATA(g)
    cdef double *mp = <double *> cnp.PyArray_DATA(m)
    cdef double *vp = <double *> cnp.PyArray_DATA(v)
    cdef double a1 = 1.0 - b1, a2 = 1.0 - b2, ic2 = 1.0 / c2, step = lr / c1, gi, d
    # same operation order as the numpy version, so results agree bitwise
    with nogil:
        for i in range(n):
            gi = gp[i]
            mp[i] = mp[i] * b1 + gi * a1
            vp[i] = vp[i] * b2 + (gi * gi) * a2
            d = sqrt(vp[i] * ic2) + eps
            pp[i] -= (mp[i] / d) * step
