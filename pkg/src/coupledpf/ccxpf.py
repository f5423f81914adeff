"""Coupled conditional particle filters: AT, AS and BS couplings.

Both sides share their initial free particles; ancestor pairs come from the
maximal-coupling resampler and children of equal parents are equal.  The
three variants differ in how the output indices are chosen:

* AT traces the stored ancestors on both sides,
* BS draws each index pair from the maximal coupling of the two sides'
  backward weights,
* AS redraws the ancestor of the reference slot during the forward pass
  (coupled across sides the same way) and then traces ancestors.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .cxpf import Variant, _checked_weights, pf_trajectory, require_density
from . import _kernels
from .errors import DegenerateWeightsError, InvalidInputError, InvalidReferenceError
from .sampling import (
    COUPLED_INIT,
    ITERATE,
    PF_INIT,
    PF_INIT_OTHER,
    RandomStream,
    _cres,
    as_generator,
    propose_pair,
)


@dataclass
class CoupledPair:
    """Output of one coupled sweep.

    ``coupled_counts[t]`` is the number of slots whose parents and states
    agree across the two sides (only filled when diagnostics are on).
    """

    s: np.ndarray
    s_tilde: np.ndarray
    kappa: int
    coupled_counts: np.ndarray | None = None

    @property
    def coupled(self) -> bool:
        return self.kappa == len(self.s)


def _equal_rows(a, b):
    eq = a == b
    if eq.ndim > 1:
        eq = eq.reshape(eq.shape[0], -1).all(axis=1)
    return eq


def coupling_boundary(s, s_tilde) -> int:
    """Length of the longest common prefix of two trajectories."""
    a = np.asarray(s)
    b = np.asarray(s_tilde)
    if a.shape != b.shape:
        raise InvalidInputError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    eq = _equal_rows(a, b)
    if eq.all():
        return len(eq)
    return int(np.argmin(eq))


def _trace(A, j_last):
    T = A.shape[0]
    J = np.empty(T, dtype=np.int64)
    J[-1] = j_last
    for t in range(T - 2, -1, -1):
        J[t] = A[t + 1, J[t + 1]]
    return J


_VARIANT_CODES = {Variant.AT: _kernels.VAR_AT, Variant.AS: _kernels.VAR_AS, Variant.BS: _kernels.VAR_BS}


_WORK = threading.local()


def _workspace(T, N):
    """Per-thread buffers for the compiled sweep, reused while (T, N) is unchanged.

    Fresh multi-megabyte allocations on every sweep cost more in page faults
    than the sweep itself on some systems.
    """
    ws = getattr(_WORK, "arrays", None)
    if ws is None or ws["key"] != (T, N):
        ws = {
            "key": (T, N),
            "U": np.empty((T, 3, N - 1)),
            "E": np.empty((T, N - 1)),
            "Et": np.empty((T, N - 1)),
            "float": [np.empty((T, N)) for _ in range(4)],
            "int": [np.empty((T, N), dtype=np.int64) for _ in range(2)],
        }
        _WORK.arrays = ws
    return ws


def _compiled_sweep(model, spec, s, s_tilde, N, variant, crn, U, Uref, Uback, E, Et, ws):
    kind, scal, y, P, cumP, G, cuminit = spec
    T = model.T
    X, W, Xt, Wt = ws["float"]
    A, At = ws["int"]
    out = np.empty(T)
    out_t = np.empty(T)
    counts = np.empty(T, dtype=np.int64)
    code, t = _kernels.ccxpf_kernel(
        kind, scal, y, P, cumP, G, cuminit,
        np.asarray(s, dtype=float), np.asarray(s_tilde, dtype=float), N,
        _VARIANT_CODES[variant], crn, U, Uref, Uback, E, Et, out, out_t, counts,
        X, W, A, Xt, Wt, At,
    )
    if code == _kernels.ERR_WEIGHTS:
        raise DegenerateWeightsError(f"all particle weights vanished at t={t}", t)
    if code == _kernels.ERR_REFERENCE:
        raise InvalidReferenceError(f"reference trajectory has zero potential at t={t}")
    if code == _kernels.ERR_BACKWARD:
        raise DegenerateWeightsError(f"backward weights vanished at t={t}", t)
    if code == _kernels.ERR_ANCESTOR:
        raise DegenerateWeightsError(f"ancestor-sampling weights vanished at t={t}", t)
    out = out.astype(model.state_dtype)
    out_t = out_t.astype(model.state_dtype)
    return CoupledPair(out, out_t, coupling_boundary(out, out_t), counts)


def ccxpf_step(model, s, s_tilde, N, variant, stream, crn=True, diagnostics=False,
               compiled=True) -> CoupledPair:
    """One sweep of the coupled conditional particle filter.

    Built-in models run a compiled sweep consuming the same random draws as
    the vectorised one; ``compiled=False`` forces the latter.  The compiled
    sweep always fills ``coupled_counts``.
    """
    variant = Variant(variant)
    if N < 2:
        raise InvalidInputError("conditional filters need N >= 2")
    require_density(model, variant)
    s = model.check_trajectory(s)
    s_tilde = model.check_trajectory(s_tilde)
    rng = as_generator(stream)
    T = model.T
    same = bool(np.array_equal(s, s_tilde))

    spec = model.kernel_spec() if compiled else None
    if spec is not None:
        # same draws as below, written into reused buffers
        ws = _workspace(T, N)
        U = rng.random(out=ws["U"])
        Uref = rng.random((T, 3, 1))
        Uback = rng.random((T, 3, 1))
        E = model.base_draws(rng, (T, N - 1), out=ws["E"])
        Et = E if (crn or same) else model.base_draws(rng.spawn(1)[0], (T, N - 1), out=ws["Et"])
        return _compiled_sweep(model, spec, s, s_tilde, N, variant, crn, U, Uref, Uback, E, Et, ws)

    U = rng.random((T, 3, N - 1))
    Uref = rng.random((T, 3, 1))
    Uback = rng.random((T, 3, 1))
    E = model.base_draws(rng, (T, N - 1))
    Et = E if (crn or same) else model.base_draws(rng.spawn(1)[0], (T, N - 1))

    X = np.empty((T, N) + model.state_shape, dtype=model.state_dtype)
    W = np.empty((T, N))
    A = np.zeros((T, N), dtype=np.int64)
    X[:, 0] = s
    X[0, 1:] = model.initial(E[0])
    W[0] = _checked_weights(model, 0, None, X[0], True)
    if same:
        Xt, Wt, At = X, W, A
    else:
        Xt = np.empty_like(X)
        Wt = np.empty_like(W)
        At = np.zeros_like(A)
        Xt[:, 0] = s_tilde
        Xt[0, 1:] = X[0, 1:]
        Wt[0] = _checked_weights(model, 0, None, Xt[0], True)
    counts = np.full(T, N, dtype=np.int64) if diagnostics else None
    if diagnostics and not same:
        counts[0] = np.count_nonzero(_equal_rows(X[0], Xt[0]))

    ancestor_sampling = variant is Variant.AS
    for t in range(1, T):
        i, it = _cres(W[t - 1], Wt[t - 1], U[t])
        A[t, 1:] = i
        if ancestor_sampling:
            a = model.backward_weights(t, W[t - 1], X[t - 1], s[t])
            if same:
                at = a
            else:
                at = model.backward_weights(t, Wt[t - 1], Xt[t - 1], s_tilde[t])
            if not (a.sum() > 0 and at.sum() > 0):
                raise DegenerateWeightsError(f"ancestor-sampling weights vanished at t={t}", t)
            r0, rt0 = _cres(a, at, Uref[t])
            A[t, 0] = r0[0]
        P = X[t - 1][A[t]]
        if same:
            X[t, 1:] = model.transition(t, P[1:], E[t])
            W[t] = _checked_weights(model, t, P, X[t], True)
            continue
        At[t, 1:] = it
        if ancestor_sampling:
            At[t, 0] = rt0[0]
        Pt = Xt[t - 1][At[t]]
        X[t, 1:], Xt[t, 1:] = propose_pair(model, t, P[1:], Pt[1:], E[t], Et[t], crn)
        W[t] = _checked_weights(model, t, P, X[t], True)
        Wt[t] = _checked_weights(model, t, Pt, Xt[t], True)
        if diagnostics:
            counts[t] = np.count_nonzero(_equal_rows(P, Pt) & _equal_rows(X[t], Xt[t]))

    j, jt = _cres(W[-1], Wt[-1], Uback[-1])
    if variant is Variant.BS:
        J = np.empty(T, dtype=np.int64)
        Jt = np.empty(T, dtype=np.int64)
        J[-1], Jt[-1] = j[0], jt[0]
        for t in range(T - 2, -1, -1):
            b = model.backward_weights(t + 1, W[t], X[t], X[t + 1, J[t + 1]])
            if same:
                bt = b
            else:
                bt = model.backward_weights(t + 1, Wt[t], Xt[t], Xt[t + 1, Jt[t + 1]])
            if not (b.sum() > 0 and bt.sum() > 0):
                raise DegenerateWeightsError(f"backward weights vanished at t={t}", t)
            r, rt = _cres(b, bt, Uback[t])
            J[t], Jt[t] = r[0], rt[0]
    else:
        J = _trace(A, j[0])
        Jt = J if same else _trace(At, jt[0])

    rows = np.arange(T)
    out = X[rows, J]
    out_t = out.copy() if same else Xt[rows, Jt]
    return CoupledPair(out, out_t, coupling_boundary(out, out_t), counts)


def initial_pair(model, N, variant, stream, crn=True, pf_particles=None):
    """Initial pair (S_0, S~_0) of the unbiased scheme.

    Two independent particle-filter trajectories give S~_0 and S_{-1}; S_0 is
    the first output of one coupled sweep from (S_{-1}, S_{-1}).
    """
    n_pf = N if pf_particles is None else pf_particles
    s0_tilde = pf_trajectory(model, n_pf, stream.child(PF_INIT))
    s_minus = pf_trajectory(model, n_pf, stream.child(PF_INIT_OTHER))
    s0 = ccxpf_step(model, s_minus, s_minus, N, variant, stream.child(COUPLED_INIT), crn).s
    return s0, s0_tilde


@dataclass
class CouplingRun:
    """Result of iterating the coupled kernel until the two chains meet.

    ``tau`` is None when the run was censored at ``cap`` iterations.
    ``kappa_trace[n - 1]`` is the boundary after iteration ``n``.
    """

    tau: int | None
    cap: int
    kappa_trace: list = field(default_factory=list)
    wallclock_ns: int = 0
    s: np.ndarray | None = None
    s_tilde: np.ndarray | None = None

    @property
    def censored(self) -> bool:
        return self.tau is None


def run_until_coupled(model, s0, s0_tilde, N, variant, cap, stream, crn=True) -> CouplingRun:
    """Iterate coupled sweeps until the outputs agree, or ``cap`` iterations pass."""
    if cap < 1:
        raise InvalidInputError("cap must be at least 1")
    start = time.perf_counter_ns()
    s, st = s0, s0_tilde
    trace = []
    tau = None
    for n in range(1, cap + 1):
        sub = stream.child(ITERATE, n) if isinstance(stream, RandomStream) else stream
        pair = ccxpf_step(model, s, st, N, variant, sub, crn)
        s, st = pair.s, pair.s_tilde
        trace.append(pair.kappa)
        if pair.coupled:
            tau = n
            break
    return CouplingRun(tau, cap, trace, time.perf_counter_ns() - start, s, st)
