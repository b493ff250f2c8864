"""Pure numpy implementations of the hot loops.

These are the reference versions; ``_kernels.pyx`` mirrors every function
with the same signature and semantics.
"""

from __future__ import annotations

import numpy as np


def cox_breslow(X, time, event, beta, want_hessian=True):
    """Breslow partial log-likelihood, gradient and Hessian.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    time : ndarray, shape (n,)
    event : ndarray of bool or {0, 1}, shape (n,)
    beta : ndarray, shape (p,)
    want_hessian : bool
        When False the returned Hessian is None.

    Returns
    -------
    loglik : float
    grad : ndarray, shape (p,)
    hess : ndarray, shape (p, p) or None
        Hessian of the log-likelihood (negative semi-definite).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event).astype(bool)
    beta = np.asarray(beta, dtype=np.float64)
    n, p = X.shape
    order = np.argsort(-time, kind="stable")
    Xs, ts, es = X[order], time[order], event[order]
    eta = Xs @ beta
    shift = eta.max() if n else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)
    s1 = np.cumsum(w[:, None] * Xs, axis=0)
    # risk set of row i = every row up to the last one sharing its time
    last = np.searchsorted(-ts, -ts, side="right") - 1
    ev = np.flatnonzero(es)
    r0 = s0[last[ev]]
    r1 = s1[last[ev]]
    loglik = float(eta[ev].sum() - (np.log(r0) + shift).sum())
    mean = r1 / r0[:, None]
    grad = Xs[ev].sum(axis=0) - mean.sum(axis=0)
    hess = None
    if want_hessian:
        s2 = np.cumsum(w[:, None, None] * (Xs[:, :, None] * Xs[:, None, :]), axis=0)
        r2 = s2[last[ev]] / r0[:, None, None]
        hess = -(r2 - mean[:, :, None] * mean[:, None, :]).sum(axis=0)
    return loglik, grad, hess


def concordance_counts(time, event, scores):
    """Harrell pair counts.

    A pair ``(i, j)`` is admissible when ``time[i] < time[j]`` and ``i`` had
    an event. It is concordant when ``scores[i] > scores[j]``.

    Returns
    -------
    concordant, tied, admissible : int
    """
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    conc = tied = adm = 0
    for i in np.flatnonzero(event):
        later = time > time[i]
        s = scores[later]
        adm += int(later.sum())
        conc += int((scores[i] > s).sum())
        tied += int((scores[i] == s).sum())
    return conc, tied, adm


def unique_fractions(members, offsets, n_universe):
    """Fraction of each set's elements that occur in no other set.

    Parameters
    ----------
    members : ndarray of int
        Concatenated element indices of all sets; no duplicates within a set.
    offsets : ndarray of int, shape (k + 1,)
        Set ``s`` is ``members[offsets[s]:offsets[s + 1]]``.
    n_universe : int
        Elements are in ``range(n_universe)``.
    """
    members = np.asarray(members, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = np.bincount(members, minlength=n_universe)
    single = counts[members] == 1
    k = offsets.size - 1
    out = np.empty(k)
    for s in range(k):
        a, b = offsets[s], offsets[s + 1]
        out[s] = single[a:b].sum() / (b - a) if b > a else 0.0
    return out


def risk_table(time, event, grid):
    """Number at risk (``time >= t``) and events (``time == t``) at each grid time."""
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event).astype(bool)
    grid = np.asarray(grid, dtype=np.float64)
    ts = np.sort(time)
    at_risk = ts.size - np.searchsorted(ts, grid, side="left")
    te = np.sort(time[event])
    events = np.searchsorted(te, grid, side="right") - np.searchsorted(te, grid, side="left")
    return at_risk.astype(np.int64), events.astype(np.int64)


def adam_update(p, g, m, v, lr, b1, b2, c1, c2, eps, tmp=None):
    """Fused bias-corrected Adam update of ``p``, ``m`` and ``v`` in place.

    ``c1`` and ``c2`` are the bias corrections ``1 - b1**t`` and
    ``1 - b2**t``. ``tmp`` is optional scratch space shaped like ``p``.
    """
    if tmp is None:
        tmp = np.empty_like(p)
    m *= b1
    np.multiply(g, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    v += tmp
    np.multiply(v, 1.0 / c2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= lr / c1
    p -= tmp
