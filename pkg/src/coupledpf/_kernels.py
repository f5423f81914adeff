"""Compiled coupled sweep for the built-in scalar model families.

Mirrors ``ccxpf.ccxpf_step`` operation for operation and consumes the same
pre-drawn uniforms and base draws.  States are float64 (finite-state labels
are stored as exact small integers).  Errors are reported as
``(code, t)`` and raised by the caller.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LGSS, HOMOGENEOUS, DISCRETE = 0, 1, 2
VAR_AT, VAR_AS, VAR_BS = 0, 1, 2
OK, ERR_WEIGHTS, ERR_REFERENCE, ERR_BACKWARD, ERR_ANCESTOR = 0, 1, 2, 3, 4

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _npdf(x, mean, sd):
    z = (x - mean) / sd
    return math.exp(-0.5 * z * z) / (sd * _SQRT_2PI)


@njit(cache=True)
def _search_right(cs, v):
    lo, hi = 0, cs.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if v < cs[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _initial(kind, scal, cuminit, u):
    if kind == LGSS:
        return scal[3] + scal[4] * u
    if kind == HOMOGENEOUS:
        return u
    return float(_search_right(cuminit, u))


# The per-particle helpers take scalars only: array indexing inside a called
# function costs reference-count traffic on every call, which dominated the
# sweep.  Finite-state lookups are done inline by the kernel.


@njit(cache=True)
def _transition(kind, scal, cumP, xp, u):
    if kind == LGSS:
        return scal[0] * xp + scal[1] * u
    if kind == HOMOGENEOUS:
        return xp + u
    r = int(xp)
    c = 0
    for k in range(cumP.shape[1]):
        if cumP[r, k] <= u:
            c += 1
    return float(c)


@njit(cache=True)
def _density(kind, ar, sd, xp, x):
    """Transition density of the continuous models."""
    if kind == LGSS:
        return _npdf(x, ar * xp, sd)
    return _npdf(x, xp, 1.0)


@njit(cache=True)
def _potential(kind, bound, obs_sd, yt, x):
    """Potential of the continuous models at observation ``yt``."""
    if kind == LGSS:
        return _npdf(yt, x, obs_sd)
    return 1.0 if abs(x) <= bound else 0.0


@njit(cache=True)
def _cumsum(w, cs):
    acc = 0.0
    for k in range(w.shape[0]):
        acc += w[k]
        cs[k] = acc


@njit(cache=True)
def _guide(cs, guide):
    """Bucket table: ``guide[j]`` is the first index whose cumulative weight exceeds j/n of the total."""
    n = cs.shape[0]
    total = cs[-1]
    i = 0
    for j in range(n):
        b = total * j / n
        while i < n - 1 and cs[i] <= b:
            i += 1
        guide[j] = i


@njit(cache=True)
def _lookup_many(w, cs, guide, u, mask, want, out, guided):
    """``out[j]``: smallest index with ``cs > u[j] * total``, for each j with ``mask[j] == want``.

    Same result as the binary search of ``inverse_cdf``; zero-weight trailing
    indices are never returned.  ``guided`` uses the bucket table ``guide``
    (worth building only for many lookups).
    """
    n = w.shape[0]
    total = cs[n - 1]
    for j in range(u.shape[0]):
        if mask[j] != want:
            continue
        v = u[j] * total
        idx = guide[min(int(u[j] * n), n - 1)] if guided else 0
        if not guided or (idx > 0 and cs[idx - 1] > v):
            # bucket boundary rounded past v; fall back to bisection
            idx = _search_right(cs, v)
        else:
            while idx < n and cs[idx] <= v:
                idx += 1
        if idx >= n:
            idx = n - 1
            while w[idx] == 0.0:
                idx -= 1
        out[j] = idx


@njit(cache=True)
def _cres(w, wt, u, out_i, out_it, scratch, guides, masks):
    """Index-coupled resampling; same branches as ``sampling._cres``.

    ``scratch`` has shape (8, N): p, q, m, r, rt and three cumulative
    buffers; ``guides`` (3, N) holds the bucket tables of those buffers and
    ``masks`` (1, N) the coupled-branch flags.
    """
    n = u.shape[1]
    N = w.shape[0]
    identical = True
    for k in range(N):
        if w[k] != wt[k]:
            identical = False
            break
    cs = scratch[5]
    mask = masks[0, :n]
    guided = n >= 8
    if identical:
        mask[:] = False
        _cumsum(w, cs)
        if guided:
            _guide(cs, guides[0])
        _lookup_many(w, cs, guides[0], u[1], mask, False, out_i, guided)
        out_it[:] = out_i
        return
    p, q, m, r, rt = scratch[0], scratch[1], scratch[2], scratch[3], scratch[4]
    sw = np.sum(w)
    swt = np.sum(wt)
    any_r = False
    any_rt = False
    for k in range(N):
        p[k] = w[k] / sw
        q[k] = wt[k] / swt
        m[k] = min(p[k], q[k])
        r[k] = p[k] - m[k]
        rt[k] = q[k] - m[k]
        if r[k] != 0.0:
            any_r = True
        if rt[k] != 0.0:
            any_rt = True
    pc = np.sum(m)
    if not (any_r and any_rt):
        mask[:] = False
        _cumsum(m, cs)
        if guided:
            _guide(cs, guides[0])
        _lookup_many(m, cs, guides[0], u[1], mask, False, out_i, guided)
        out_it[:] = out_i
        return
    cm, cr = scratch[6], scratch[7]
    _cumsum(m, cm)
    _cumsum(r, cr)
    _cumsum(rt, cs)
    gm, gr, grt = guides[0], guides[1], guides[2]
    n_coupled = 0
    for j in range(n):
        mask[j] = pc > 0.0 and u[0, j] < pc
        n_coupled += mask[j]
    if n_coupled > 0:
        if guided:
            _guide(cm, gm)
        _lookup_many(m, cm, gm, u[1], mask, True, out_i, guided)
        for j in range(n):
            if mask[j]:
                out_it[j] = out_i[j]
    if n_coupled < n:
        if guided:
            _guide(cr, gr)
            _guide(cs, grt)
        _lookup_many(r, cr, gr, u[1], mask, False, out_i, guided)
        _lookup_many(rt, cs, grt, u[2], mask, False, out_it, guided)


@njit(cache=True)
def _weights_ok(w, t):
    total = 0.0
    for k in range(w.shape[0]):
        if w[k] < 0.0 or not math.isfinite(w[k]):
            return False
        total += w[k]
    return total > 0.0 and math.isfinite(total)


@njit(cache=True, nogil=True)
def ccxpf_kernel(kind, scal, y, P, cumP, G, cuminit, s, st, N, variant, crn,
                 U, Uref, Uback, E, Et, out, out_t, counts, X, W, A, Xt, Wt, At):
    """``X, W, A, Xt, Wt, At`` are (T, N) work arrays, overwritten."""
    T = s.shape[0]
    scratch = np.empty((8, N))
    guides = np.empty((3, N), dtype=np.int64)
    masks = np.empty((1, N), dtype=np.bool_)
    s0 = scal[0]
    s1 = scal[1] if kind == LGSS else 1.0
    s2 = scal[2] if kind == LGSS else 1.0
    ii = np.empty(N - 1, dtype=np.int64)
    iit = np.empty(N - 1, dtype=np.int64)
    one = np.empty(1, dtype=np.int64)
    onet = np.empty(1, dtype=np.int64)
    a = np.empty(N)
    at = np.empty(N)

    for t in range(T):
        X[t, 0] = s[t]
        Xt[t, 0] = st[t]
    for i in range(1, N):
        X[0, i] = _initial(kind, scal, cuminit, E[0, i - 1])
        Xt[0, i] = X[0, i]
    yt0 = y[0] if kind == LGSS else 0.0
    for i in range(N):
        W[0, i] = G[0, int(X[0, i])] if kind == DISCRETE else _potential(kind, s0, s2, yt0, X[0, i])
        Wt[0, i] = W[0, i]
        if Xt[0, i] != X[0, i]:
            Wt[0, i] = G[0, int(Xt[0, i])] if kind == DISCRETE else _potential(kind, s0, s2, yt0, Xt[0, i])
    if not (_weights_ok(W[0], 0) and _weights_ok(Wt[0], 0)):
        return ERR_WEIGHTS, 0
    if W[0, 0] <= 0.0 or Wt[0, 0] <= 0.0:
        return ERR_REFERENCE, 0
    c = 0
    for i in range(N):
        if X[0, i] == Xt[0, i]:
            c += 1
    counts[0] = c

    for t in range(1, T):
        _cres(W[t - 1], Wt[t - 1], U[t], ii, iit, scratch, guides, masks)
        A[t, 0] = 0
        At[t, 0] = 0
        for i in range(1, N):
            A[t, i] = ii[i - 1]
            At[t, i] = iit[i - 1]
        if variant == VAR_AS:
            for i in range(N):
                xp = X[t - 1, i]
                d = P[int(xp), int(s[t])] if kind == DISCRETE else _density(kind, s0, s1, xp, s[t])
                a[i] = W[t - 1, i] * d
                if s[t] == st[t] and xp == Xt[t - 1, i]:
                    at[i] = a[i]
                else:
                    xp = Xt[t - 1, i]
                    d = P[int(xp), int(st[t])] if kind == DISCRETE else _density(kind, s0, s1, xp, st[t])
                    at[i] = Wt[t - 1, i] * d
            if not (np.sum(a) > 0.0 and np.sum(at) > 0.0):
                return ERR_ANCESTOR, t
            _cres(a, at, Uref[t], one, onet, scratch, guides, masks)
            A[t, 0] = one[0]
            At[t, 0] = onet[0]
        yt = y[t] if kind == LGSS else 0.0
        c = 0
        for i in range(N):
            xp = X[t - 1, A[t, i]]
            xpt = Xt[t - 1, At[t, i]]
            if i > 0:
                X[t, i] = _transition(kind, scal, cumP, xp, E[t, i - 1])
                if xp == xpt:
                    Xt[t, i] = X[t, i]
                elif crn:
                    Xt[t, i] = _transition(kind, scal, cumP, xpt, E[t, i - 1])
                else:
                    Xt[t, i] = _transition(kind, scal, cumP, xpt, Et[t, i - 1])
            x = X[t, i]
            W[t, i] = G[t, int(x)] if kind == DISCRETE else _potential(kind, s0, s2, yt, x)
            # potentials of the built-in models depend on x_t only
            Wt[t, i] = W[t, i]
            x = Xt[t, i]
            if x != X[t, i]:
                Wt[t, i] = G[t, int(x)] if kind == DISCRETE else _potential(kind, s0, s2, yt, x)
            if xp == xpt and X[t, i] == Xt[t, i]:
                c += 1
        counts[t] = c
        if not (_weights_ok(W[t], t) and _weights_ok(Wt[t], t)):
            return ERR_WEIGHTS, t
        if W[t, 0] <= 0.0 or Wt[t, 0] <= 0.0:
            return ERR_REFERENCE, t

    J = np.empty(T, dtype=np.int64)
    Jt = np.empty(T, dtype=np.int64)
    _cres(W[T - 1], Wt[T - 1], Uback[T - 1], one, onet, scratch, guides, masks)
    J[T - 1] = one[0]
    Jt[T - 1] = onet[0]
    for t in range(T - 2, -1, -1):
        if variant == VAR_BS:
            xn = X[t + 1, J[t + 1]]
            xnt = Xt[t + 1, Jt[t + 1]]
            for i in range(N):
                xp = X[t, i]
                d = P[int(xp), int(xn)] if kind == DISCRETE else _density(kind, s0, s1, xp, xn)
                a[i] = W[t, i] * d
                if xn == xnt and xp == Xt[t, i]:
                    at[i] = a[i]
                else:
                    xp = Xt[t, i]
                    d = P[int(xp), int(xnt)] if kind == DISCRETE else _density(kind, s0, s1, xp, xnt)
                    at[i] = Wt[t, i] * d
            if not (np.sum(a) > 0.0 and np.sum(at) > 0.0):
                return ERR_BACKWARD, t
            _cres(a, at, Uback[t], one, onet, scratch, guides, masks)
            J[t] = one[0]
            Jt[t] = onet[0]
        else:
            J[t] = A[t + 1, J[t + 1]]
            Jt[t] = At[t + 1, Jt[t + 1]]
    for t in range(T):
        out[t] = X[t, J[t]]
        out_t[t] = Xt[t, Jt[t]]
    return OK, -1
