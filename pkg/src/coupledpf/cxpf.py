"""Conditional particle filter kernels (ancestor tracing and backward sampling).

Particle slot 0 carries the reference trajectory; it is the ancestor of
itself (``ancestors[t, 0] == 0``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DegenerateWeightsError, InvalidInputError, InvalidReferenceError
from .sampling import as_generator, inverse_cdf


class Variant(str, enum.Enum):
    AT = "AT"  # ancestor tracing
    AS = "AS"  # ancestor sampling
    BS = "BS"  # backward sampling

    @property
    def needs_density(self) -> bool:
        return self is not Variant.AT


@dataclass
class ParticleSystem:
    """States ``(T, N, ...)``, weights ``(T, N)`` and ancestors ``(T, N)`` of one pass.

    ``ancestors[0]`` is unused and zero.
    """

    states: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray

    @property
    def T(self):
        return self.states.shape[0]

    @property
    def N(self):
        return self.states.shape[1]

    def trajectory(self, indices) -> np.ndarray:
        return self.states[np.arange(self.T), indices]


def _checked_weights(model, t, x_prev, x, reference_slot):
    w = model.weights(t, x_prev, x)
    total = w.sum()
    if not np.isfinite(total) or total <= 0 or np.any(w < 0):
        raise DegenerateWeightsError(f"all particle weights vanished at t={t}", t)
    if reference_slot and w[0] <= 0:
        raise InvalidReferenceError(f"reference trajectory has zero potential at t={t}")
    return w


def require_density(model, variant):
    if Variant(variant).needs_density and not model.has_density:
        raise CapabilityError(f"variant {Variant(variant).value} needs transition densities")


def forward_pass(model, N, rng, reference=None) -> ParticleSystem:
    """Bootstrap filter with multinomial resampling, optionally conditioned on slot 0."""
    T = model.T
    cond = reference is not None
    free = 1 if cond else 0
    n_free = N - free
    X = np.empty((T, N) + model.state_shape, dtype=model.state_dtype)
    W = np.empty((T, N))
    A = np.zeros((T, N), dtype=np.int64)
    U = rng.random((T, n_free))
    E = model.base_draws(rng, (T, n_free))
    if cond:
        X[:, 0] = reference
    X[0, free:] = model.initial(E[0])
    W[0] = _checked_weights(model, 0, None, X[0], cond)
    for t in range(1, T):
        A[t, free:] = inverse_cdf(W[t - 1], U[t])
        parents = X[t - 1][A[t]]
        X[t, free:] = model.transition(t, parents[free:], E[t])
        W[t] = _checked_weights(model, t, parents, X[t], cond)
    return ParticleSystem(X, W, A)


def trace_ancestors(system: ParticleSystem, j_last: int) -> np.ndarray:
    J = np.empty(system.T, dtype=np.int64)
    J[-1] = j_last
    for t in range(system.T - 2, -1, -1):
        J[t] = system.ancestors[t + 1, J[t + 1]]
    return J


def backward_sample(model, system: ParticleSystem, j_last: int, u) -> np.ndarray:
    """Backward-sampling indices given uniforms ``u`` of length T."""
    X, W = system.states, system.weights
    J = np.empty(system.T, dtype=np.int64)
    J[-1] = j_last
    for t in range(system.T - 2, -1, -1):
        b = model.backward_weights(t + 1, W[t], X[t], X[t + 1, J[t + 1]])
        if not b.sum() > 0:
            raise DegenerateWeightsError(f"backward weights vanished at t={t}", t)
        J[t] = inverse_cdf(b, u[t:t + 1])[0]
    return J


def pf_trajectory(model, N, stream) -> np.ndarray:
    """One trajectory from a bootstrap particle filter, by ancestor tracing."""
    if N < 1:
        raise InvalidInputError("N must be at least 1")
    rng = as_generator(stream)
    system = forward_pass(model, N, rng)
    j_last = int(inverse_cdf(system.weights[-1], rng.random(1))[0])
    return system.trajectory(trace_ancestors(system, j_last))


def cxpf_step(model, reference, N, variant, stream, return_system=False):
    """One sweep of the conditional particle filter (AT) or its backward-sampling form (BS).

    Returns the new trajectory, and the particle system and indices when
    ``return_system`` is set.
    """
    variant = Variant(variant)
    if variant is Variant.AS:
        raise InvalidInputError("single-chain kernels support AT and BS; use ccxpf_step for AS")
    if N < 2:
        raise InvalidInputError("conditional filters need N >= 2")
    require_density(model, variant)
    reference = model.check_trajectory(reference)
    rng = as_generator(stream)
    system = forward_pass(model, N, rng, reference)
    u = rng.random(model.T)
    j_last = int(inverse_cdf(system.weights[-1], u[-1:])[0])
    if variant is Variant.AT:
        J = trace_ancestors(system, j_last)
    else:
        J = backward_sample(model, system, j_last, u)
    out = system.trajectory(J)
    if return_system:
        return out, system, J
    return out
