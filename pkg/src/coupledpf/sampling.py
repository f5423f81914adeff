"""Random streams, categorical draws and the index-coupled resampler.

Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DegenerateWeightsError, InvalidInputError

# Stream purposes, used as the last component of a stream path.
PF_INIT = 0
PF_INIT_OTHER = 1
COUPLED_INIT = 2
ITERATE = 3


@dataclass(frozen=True)
class RandomStream:
    """A reproducible random stream identified by ``(seed, path)``.

    Backed by the Philox counter-based generator keyed through
    ``SeedSequence(seed, spawn_key=path)``, so every path yields its own
    independent, platform-stable sequence.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) % 2**64)
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))
        if any(p < 0 for p in self.path):
            raise ValueError("stream path components must be nonnegative")

    def child(self, *ids) -> "RandomStream":
        return RandomStream(self.seed, self.path + tuple(ids))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def path_string(self) -> str:
        return "/".join(str(p) for p in (self.seed,) + self.path)


def as_generator(stream) -> np.random.Generator:
    """Accept a RandomStream, a Generator or an integer seed."""
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RandomStream):
        return stream.generator()
    if isinstance(stream, (int, np.integer)):
        return RandomStream(int(stream)).generator()
    raise TypeError(f"cannot make a generator from {type(stream).__name__}")


def check_weights(w, t=None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError("weights must be a nonempty 1-d array")
    total = w.sum()
    if not np.isfinite(total) or np.any(w < 0) or total <= 0:
        where = "" if t is None else f" at t={t}"
        raise DegenerateWeightsError(f"weights degenerate{where}: need nonnegative, finite, not all zero", t)
    return w


def inverse_cdf(w, u):
    """Inverse-CDF lookup of uniforms ``u`` against unnormalised weights ``w``.

    Never returns an index of zero weight, including when rounding pushes
    ``u * sum(w)`` onto the total.
    """
    cs = np.cumsum(w)
    idx = np.searchsorted(cs, u * cs[-1], side="right")
    over = idx >= len(w)
    if over.any():
        idx[over] = np.flatnonzero(w)[-1]
    return idx


def categorical(w, stream, size=None):
    """Draw from Categ(w) by inverse CDF over the given order.

    Returns an int, or an array of ``size`` ints.
    """
    w = check_weights(w)
    rng = as_generator(stream)
    if size is None:
        return int(inverse_cdf(w, np.array([rng.random()]))[0])
    return inverse_cdf(w, rng.random(size))


def coupling_probability(w, w_tilde) -> float:
    """Total mass sum_i min(w_i, w~_i) of the two normalised weight vectors."""
    w = check_weights(w)
    wt = check_weights(w_tilde)
    return float(np.minimum(w / w.sum(), wt / wt.sum()).sum())


def coupled_law(w, w_tilde) -> np.ndarray:
    """Exact joint law of one index pair drawn by :func:`cres`.

    Entry (i, j) is P(I = i, I~ = j).
    """
    w = check_weights(w)
    wt = check_weights(w_tilde)
    p, q = w / w.sum(), wt / wt.sum()
    m = np.minimum(p, q)
    pc = m.sum()
    law = np.diag(m)
    if 1.0 - pc > 0:
        r = np.clip(p - m, 0.0, None)
        rt = np.clip(q - m, 0.0, None)
        if r.sum() > 0 and rt.sum() > 0:
            law = law + (1.0 - pc) * np.outer(r / r.sum(), rt / rt.sum())
    return law


def _cres(w, wt, u):
    """Index-coupled resampling driven by uniforms ``u`` of shape (3, n).

    Row 0 picks the branch, row 1 the first index, row 2 the second index
    in the residual branch.  Weights need not be normalised.
    """
    if w is wt or np.array_equal(w, wt):
        idx = inverse_cdf(w, u[1])
        return idx, idx
    p = w / w.sum()
    q = wt / wt.sum()
    m = np.minimum(p, q)
    pc = m.sum()
    # p - m and q - m are exact nonnegative differences; their mass stands in
    # for 1 - pc, so no division by 1 - pc is needed.
    r = p - m
    rt = q - m
    if not (r.any() and rt.any()):
        idx = inverse_cdf(m, u[1])
        return idx, idx
    if pc <= 0:
        return inverse_cdf(r, u[1]), inverse_cdf(rt, u[2])
    coupled = u[0] < pc
    i = np.where(coupled, inverse_cdf(m, u[1]), inverse_cdf(r, u[1]))
    it = np.where(coupled, i, inverse_cdf(rt, u[2]))
    return i, it


def cres(w, w_tilde, n, stream):
    """Maximal coupling of Categ(w) and Categ(w~), ``n`` independent pairs.

    Returns two integer arrays ``(I, I~)`` of length ``n``.
    """
    w = check_weights(w)
    wt = check_weights(w_tilde)
    if w.shape != wt.shape:
        raise InvalidInputError(f"weight vectors differ in length: {w.size} vs {wt.size}")
    rng = as_generator(stream)
    return _cres(w, wt, rng.random((3, n)))


def coupled_propose(model, t, x_prev, x_prev_tilde, stream, crn=True):
    """Propose from M_t on both sides with shared or independent base draws.

    Rows whose parents are equal always share their draw, so they stay
    equal.  With ``crn`` every row shares its draw; otherwise unequal rows
    use draws from a forked stream.
    """
    if t < 1:
        raise InvalidInputError("coupled proposals start at t = 1 (the second time step)")
    rng = as_generator(stream)
    xp = np.asarray(x_prev, dtype=model.state_dtype)
    xpt = np.asarray(x_prev_tilde, dtype=model.state_dtype)
    if xp.shape != xpt.shape:
        raise InvalidInputError("parent arrays differ in shape")
    single = xp.ndim == len(model.state_shape)
    if single:
        xp, xpt = xp[None], xpt[None]
    try:
        u = model.base_draws(rng, len(xp))
        ut = u if crn else model.base_draws(rng.spawn(1)[0], len(xp))
        x, xt = propose_pair(model, t, xp, xpt, u, ut, crn)
    except NotImplementedError as exc:
        raise CapabilityError(f"{type(model).__name__} has no transition sampler") from exc
    return (x[0], xt[0]) if single else (x, xt)


def states_equal(model, a, b):
    eq = a == b
    if model.state_shape:
        eq = eq.reshape(eq.shape[0], -1).all(axis=1)
    return eq


def propose_pair(model, t, xp, xpt, u, ut, crn):
    """Vectorised coupled proposal given pre-drawn base draws."""
    x = model.transition(t, xp, u)
    if crn:
        return x, model.transition(t, xpt, u)
    eq = states_equal(model, xp, xpt)
    if eq.all():
        return x, x.copy()
    xt = model.transition(t, xpt, ut)
    xt[eq] = x[eq]
    return x, xt
