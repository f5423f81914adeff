"""Feynman-Kac models and their exact oracles.

A model describes the unnormalised path density

    gamma_T(x_{1:T}) = M_1(x_1) G_1(x_1) prod_{t>=2} M_t(x_{t-1}, x_t) G_t(x_{t-1}, x_t)

through vectorised samplers and evaluators.  Time indices are 0-based
throughout the code: ``t = 0`` is the initial step, ``t = T - 1`` the last.

Proposals are split into model-independent *base draws* (standard normals or
uniforms) and a deterministic map ``transition(t, x_prev, u)``.  Feeding the
same base draws to two parents is how common random numbers are shared.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CapabilityError,
    CapacityError,
    DegenerateModelError,
    InvalidInputError,
    InvalidParameterError,
)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _normal_pdf(x, mean, sd):
    z = (x - mean) / sd
    return np.exp(-0.5 * z * z) / (sd * np.sqrt(2.0 * np.pi))


def _normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


_EMPTY1 = np.zeros(1)
_EMPTY2 = np.zeros((1, 1))


def _kernel_args(kind, scal, y=_EMPTY1, P=_EMPTY2, cumP=_EMPTY2, G=_EMPTY2, cuminit=_EMPTY1):
    return (kind, np.asarray(scal, dtype=float), np.asarray(y, dtype=float),
            np.ascontiguousarray(P, dtype=float), np.ascontiguousarray(cumP, dtype=float),
            np.ascontiguousarray(G, dtype=float), np.asarray(cuminit, dtype=float))


@dataclass(frozen=True)
class MixingConstants:
    """Strong-mixing bounds of a model, per time step.

    ``m_lower[0]``/``m_upper[0]`` are unused (there is no transition into the
    first step) and hold ``nan``.
    """

    g_lower: np.ndarray
    g_upper: np.ndarray
    m_lower: np.ndarray
    m_upper: np.ndarray
    g_current_only: bool = True
    m_current_only: bool = False

    def __post_init__(self):
        for name in ("g_lower", "g_upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or np.any(arr <= 0) or not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} must be positive and finite")
            object.__setattr__(self, name, arr)
        T = len(self.g_lower)
        for name in ("m_lower", "m_upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (T,):
                raise InvalidParameterError(f"{name} must have length T={T}")
            if T > 1 and (np.any(arr[1:] <= 0) or not np.all(np.isfinite(arr[1:]))):
                raise InvalidParameterError(f"{name} must be positive and finite")
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return len(self.g_lower)

    @property
    def delta(self) -> float:
        return float(np.min(self.g_lower / self.g_upper))

    @property
    def epsilon(self) -> float:
        """min over t of the G(t) M(t+1) G(t+1) lower/upper ratio.

        The M factor is dropped when transitions ignore the previous state and
        the G(t+1) factor when potentials depend on the current state only.
        With T = 1 the minimum is over an empty set; delta is returned.
        """
        if self.T == 1:
            return self.delta
        g = self.g_lower / self.g_upper
        ratio = g[:-1].copy()
        if not self.m_current_only:
            ratio *= self.m_lower[1:] / self.m_upper[1:]
        if not self.g_current_only:
            ratio *= g[1:]
        return float(np.min(ratio))


class ModelSpec:
    """Base class for Feynman-Kac models.

    Subclasses set ``T`` and implement ``initial``, ``transition`` and
    ``potential``; density-evaluable models also implement
    ``initial_density`` and ``transition_density``.  All methods are
    vectorised over a leading particle axis.
    """

    T: int
    state_shape: tuple = ()
    state_dtype = np.float64
    discrete = False
    g_current_only = True
    m_current_only = False
    has_density = True
    log_space = False
    observations = None

    # -- sampling ---------------------------------------------------------
    def base_draws(self, rng, size, out=None):
        """Base randomness for ``size`` proposals (standard normals by default).

        ``out`` receives the draws in place when given.
        """
        if out is not None:
            return rng.standard_normal(out=out)
        return rng.standard_normal(tuple(np.atleast_1d(size)) + self.state_shape)

    def initial(self, u):
        raise NotImplementedError

    def transition(self, t, x_prev, u):
        raise NotImplementedError

    def sample_initial(self, rng, n):
        return self.initial(self.base_draws(rng, n))

    def sample_transition(self, rng, t, x_prev):
        x_prev = np.asarray(x_prev)
        n = x_prev.shape[0] if x_prev.ndim > len(self.state_shape) else 1
        out = self.transition(t, np.reshape(x_prev, (n,) + self.state_shape),
                              self.base_draws(rng, n))
        return out if x_prev.ndim > len(self.state_shape) else out[0]

    # -- evaluation -------------------------------------------------------
    def potential(self, t, x_prev, x):
        raise NotImplementedError

    def initial_density(self, x):
        raise CapabilityError(f"{type(self).__name__} has no initial density")

    def transition_density(self, t, x_prev, x):
        raise CapabilityError(f"{type(self).__name__} has no transition density")

    def log_potential(self, t, x_prev, x):
        with np.errstate(divide="ignore"):
            return np.log(self.potential(t, x_prev, x))

    def log_initial_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.initial_density(x))

    def log_transition_density(self, t, x_prev, x):
        with np.errstate(divide="ignore"):
            return np.log(self.transition_density(t, x_prev, x))

    def mixing_constants(self) -> MixingConstants | None:
        """Strong-mixing constants, or None when the model does not mix strongly."""
        return None

    def kernel_spec(self):
        """Arguments for the compiled sweep, or None if the model has no compiled form."""
        return None

    # -- helpers used by the particle filters ------------------------------
    def weights(self, t, x_prev, x):
        """Nonnegative weights G_t(x_prev, x), up to a positive factor per call."""
        if not self.log_space:
            return self.potential(t, x_prev, x)
        lw = self.log_potential(t, x_prev, x)
        top = np.max(lw)
        if not np.isfinite(top):
            return np.zeros_like(lw)
        return np.exp(lw - top)

    def backward_weights(self, t, w, x_prev, x_next):
        """Backward-sampling weights w * M_t(x_prev, x_next) * G_t(x_prev, x_next).

        ``t`` is the time index of ``x_next``.  When G_t ignores ``x_prev`` its
        factor is the same for every particle and is left out.
        """
        if self.log_space:
            with np.errstate(divide="ignore"):
                lb = np.log(w) + self.log_transition_density(t, x_prev, x_next)
            if not self.g_current_only:
                lb = lb + self.log_potential(t, x_prev, x_next)
            top = np.max(lb)
            if not np.isfinite(top):
                return np.zeros_like(lb)
            return np.exp(lb - top)
        b = w * self.transition_density(t, x_prev, x_next)
        if not self.g_current_only:
            b = b * self.potential(t, x_prev, x_next)
        return b

    def log_gamma(self, traj) -> float:
        """Log of the unnormalised path density at one trajectory."""
        x = self.check_trajectory(traj)
        out = float(self.log_initial_density(x[:1])[0] + self.log_potential(0, None, x[:1])[0])
        for t in range(1, self.T):
            out += float(self.log_transition_density(t, x[t - 1:t], x[t:t + 1])[0])
            out += float(self.log_potential(t, x[t - 1:t], x[t:t + 1])[0])
        return out

    def check_trajectory(self, traj) -> np.ndarray:
        x = np.asarray(traj, dtype=self.state_dtype)
        if x.shape != (self.T,) + self.state_shape:
            raise InvalidInputError(
                f"trajectory shape {x.shape} does not match {(self.T,) + self.state_shape}"
            )
        return x


# ---------------------------------------------------------------------------
# Linear Gaussian state-space model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LGSSParams:
    """x_1 ~ N(initial_mean, initial_sd^2); x_t = ar x_{t-1} + state_sd e_t; y_t = x_t + obs_sd v_t."""

    ar: float
    state_sd: float
    obs_sd: float
    initial_mean: float = 0.0
    initial_sd: float | None = None

    def __post_init__(self):
        if self.initial_sd is None:
            object.__setattr__(self, "initial_sd", self.state_sd)
        for name in ("state_sd", "obs_sd", "initial_sd"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidParameterError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.ar):
            raise InvalidParameterError("ar must be finite")


@dataclass(frozen=True, eq=False)
class LGSSModel(ModelSpec):
    """Bootstrap Feynman-Kac model of a scalar linear Gaussian HMM."""

    params: LGSSParams
    observations: np.ndarray
    log_space: bool = False

    def __post_init__(self):
        y = np.array(self.observations, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise InvalidInputError("observations must be a nonempty 1-d array")
        y.setflags(write=False)
        object.__setattr__(self, "observations", y)

    @property
    def T(self):
        return len(self.observations)

    def initial(self, u):
        p = self.params
        return p.initial_mean + p.initial_sd * u

    def transition(self, t, x_prev, u):
        p = self.params
        return p.ar * x_prev + p.state_sd * u

    def initial_density(self, x):
        p = self.params
        return _normal_pdf(x, p.initial_mean, p.initial_sd)

    def transition_density(self, t, x_prev, x):
        p = self.params
        return _normal_pdf(x, p.ar * x_prev, p.state_sd)

    def potential(self, t, x_prev, x):
        return _normal_pdf(self.observations[t], x, self.params.obs_sd)

    def log_initial_density(self, x):
        p = self.params
        return _normal_logpdf(x, p.initial_mean, p.initial_sd)

    def log_transition_density(self, t, x_prev, x):
        p = self.params
        return _normal_logpdf(x, p.ar * x_prev, p.state_sd)

    def log_potential(self, t, x_prev, x):
        return _normal_logpdf(self.observations[t], x, self.params.obs_sd)

    def kernel_spec(self):
        if self.log_space:
            return None
        p = self.params
        scal = np.array([p.ar, p.state_sd, p.obs_sd, p.initial_mean, p.initial_sd])
        return _kernel_args(0, scal, y=self.observations)


def simulate_lgss(params: LGSSParams, T: int, rng):
    """Simulate latent states and observations of length T."""
    x = np.empty(T)
    x[0] = params.initial_mean + params.initial_sd * rng.standard_normal()
    for t in range(1, T):
        x[t] = params.ar * x[t - 1] + params.state_sd * rng.standard_normal()
    y = x + params.obs_sd * rng.standard_normal(T)
    return x, y


def make_lgss(ar, state_sd, obs_sd, T, seed, *, initial_sd=None, log_space=False):
    """Build an LGSS model with observations simulated from it.

    Returns ``(model, observations)``; the data depend only on ``seed``.
    """
    from .sampling import RandomStream

    if int(T) != T or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T}")
    params = LGSSParams(ar, state_sd, obs_sd, initial_sd=initial_sd)
    _, y = simulate_lgss(params, int(T), RandomStream(seed).generator())
    return LGSSModel(params, y, log_space=log_space), y


# ---------------------------------------------------------------------------
# Homogeneous random walk with indicator potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HomogeneousModel(ModelSpec):
    """Standard normal random walk started at N(0, 1), potentials 1{|x| <= s}."""

    s: float
    T: int

    def initial(self, u):
        return u

    def transition(self, t, x_prev, u):
        return x_prev + u

    def initial_density(self, x):
        return _normal_pdf(x, 0.0, 1.0)

    def transition_density(self, t, x_prev, x):
        return _normal_pdf(x, x_prev, 1.0)

    def log_initial_density(self, x):
        return _normal_logpdf(x, 0.0, 1.0)

    def log_transition_density(self, t, x_prev, x):
        return _normal_logpdf(x, x_prev, 1.0)

    def potential(self, t, x_prev, x):
        return (np.abs(x) <= self.s).astype(float)

    def kernel_spec(self):
        return _kernel_args(1, np.array([self.s]))


def make_homogeneous(s, T):
    if not np.isfinite(s) or s <= 0:
        raise InvalidParameterError(f"s must be positive, got {s}")
    if int(T) != T or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T}")
    return HomogeneousModel(float(s), int(T))


# ---------------------------------------------------------------------------
# Finite state space model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteModel(ModelSpec):
    """Time-homogeneous Markov chain on {0, ..., K-1} with tabulated potentials.

    ``potentials`` has shape (T, K): G_t(x_{t-1}, x_t) = potentials[t, x_t].
    """

    transition_matrix: np.ndarray
    potentials: np.ndarray
    initial_probs: np.ndarray
    _cum_initial: np.ndarray = field(init=False, repr=False)
    _cum_rows: np.ndarray = field(init=False, repr=False)

    state_dtype = np.int64
    discrete = True

    def __post_init__(self):
        P = np.array(self.transition_matrix, dtype=float)
        G = np.array(self.potentials, dtype=float)
        m1 = np.array(self.initial_probs, dtype=float)
        for arr in (P, G, m1):
            arr.setflags(write=False)
        object.__setattr__(self, "transition_matrix", P)
        object.__setattr__(self, "potentials", G)
        object.__setattr__(self, "initial_probs", m1)
        ci = np.cumsum(m1)
        ci[-1] = 1.0
        cr = np.cumsum(P, axis=1)
        cr[:, -1] = 1.0
        object.__setattr__(self, "_cum_initial", ci)
        object.__setattr__(self, "_cum_rows", cr)

    @property
    def K(self):
        return self.transition_matrix.shape[0]

    @property
    def T(self):
        return self.potentials.shape[0]

    @property
    def m_current_only(self):
        return bool(np.all(self.transition_matrix == self.transition_matrix[0]))

    def base_draws(self, rng, size, out=None):
        if out is not None:
            return rng.random(out=out)
        return rng.random(tuple(np.atleast_1d(size)))

    def initial(self, u):
        return np.searchsorted(self._cum_initial, u, side="right").astype(np.int64)

    def transition(self, t, x_prev, u):
        rows = self._cum_rows[x_prev]
        return np.count_nonzero(rows <= u[..., None], axis=-1).astype(np.int64)

    def initial_density(self, x):
        return self.initial_probs[x]

    def transition_density(self, t, x_prev, x):
        return self.transition_matrix[x_prev, x]

    def potential(self, t, x_prev, x):
        return self.potentials[t, x]

    def kernel_spec(self):
        return _kernel_args(2, np.zeros(1), P=self.transition_matrix, cumP=self._cum_rows,
                            G=self.potentials, cuminit=self._cum_initial)

    def mixing_constants(self):
        P = self.transition_matrix
        m_lo = np.full(self.T, np.nan)
        m_hi = np.full(self.T, np.nan)
        m_lo[1:] = P.min()
        m_hi[1:] = P.max()
        return MixingConstants(
            g_lower=self.potentials.min(axis=1),
            g_upper=self.potentials.max(axis=1),
            m_lower=m_lo,
            m_upper=m_hi,
            g_current_only=True,
            m_current_only=self.m_current_only,
        )


def make_discrete(K, transition_matrix, potentials, T, *, initial=None):
    """Build a finite-state model satisfying strong mixing.

    ``potentials`` is either one value per state (shared by all times) or a
    (T, K) table.  ``initial`` defaults to the uniform distribution.
    """
    if int(K) != K or K < 1:
        raise InvalidParameterError(f"K must be a positive integer, got {K}")
    if int(T) != T or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T}")
    K, T = int(K), int(T)
    P = np.asarray(transition_matrix, dtype=float)
    if P.shape != (K, K):
        raise InvalidParameterError(f"transition matrix must be {K}x{K}")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise InvalidParameterError("transition matrix rows must be probability vectors")
    G = np.asarray(potentials, dtype=float)
    if G.shape == (K,):
        G = np.broadcast_to(G, (T, K))
    if G.shape != (T, K):
        raise InvalidParameterError(f"potentials must have shape ({K},) or ({T}, {K})")
    if np.any(G <= 0) or not np.all(np.isfinite(G)):
        raise InvalidParameterError("potentials must be strictly positive and finite")
    m1 = np.full(K, 1.0 / K) if initial is None else np.asarray(initial, dtype=float)
    if m1.shape != (K,) or np.any(m1 < 0) or not np.isclose(m1.sum(), 1.0, rtol=0, atol=1e-12):
        raise InvalidParameterError("initial must be a probability vector of length K")
    return DiscreteModel(P, G, m1)


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothingTable:
    """Exact smoothing law of a finite-state model over all K^T trajectories.

    Row ``k`` of ``trajectories`` is the trajectory whose mixed-radix index
    (first time step most significant) is ``k``.
    """

    K: int
    T: int
    probs: np.ndarray
    log_c: float

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))

    @property
    def trajectories(self) -> np.ndarray:
        return np.indices((self.K,) * self.T).reshape(self.T, -1).T

    def index_of(self, trajs) -> np.ndarray:
        """Mixed-radix index of trajectories with shape (..., T)."""
        radix = self.K ** np.arange(self.T - 1, -1, -1)
        return np.asarray(trajs, dtype=np.int64) @ radix

    def expectation(self, h) -> float:
        vals = np.array([h(x) for x in self.trajectories], dtype=float)
        return float(self.probs @ vals)

    def variance(self, h) -> float:
        vals = np.array([h(x) for x in self.trajectories], dtype=float)
        mean = self.probs @ vals
        return float(self.probs @ (vals - mean) ** 2)


def exact_smoothing(model: ModelSpec, max_atoms: int = 10**6) -> SmoothingTable:
    """Enumerate the normalised path density of a finite-state model."""
    if not model.discrete:
        raise CapabilityError("exact smoothing needs a finite state space")
    K, T = model.K, model.T
    if K**T > max_atoms:
        raise CapacityError(f"K^T = {K}^{T} exceeds {max_atoms} atoms")
    x = np.indices((K,) * T).reshape(T, -1)
    with np.errstate(divide="ignore"):
        log_gamma = model.log_initial_density(x[0]) + model.log_potential(0, None, x[0])
        for t in range(1, T):
            log_gamma = log_gamma + model.log_transition_density(t, x[t - 1], x[t])
            log_gamma = log_gamma + model.log_potential(t, x[t - 1], x[t])
    log_c = float(logsumexp(log_gamma))
    if not np.isfinite(log_c):
        raise DegenerateModelError("normalising constant is zero")
    probs = np.exp(log_gamma - log_c)
    return SmoothingTable(K, T, probs, log_c)


@dataclass(frozen=True)
class KalmanResult:
    mean: np.ndarray
    var: np.ndarray
    filter_mean: np.ndarray
    filter_var: np.ndarray


def kalman_smoother(params: LGSSParams, observations) -> KalmanResult:
    """Forward Kalman filter followed by the Rauch-Tung-Striebel smoother."""
    y = np.asarray(observations, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InvalidInputError("observations must be a nonempty 1-d array for a scalar LGSS")
    T = y.size
    a, q, r = params.ar, params.state_sd**2, params.obs_sd**2
    mf, pf = np.empty(T), np.empty(T)
    mp, pp = np.empty(T), np.empty(T)
    mp[0], pp[0] = params.initial_mean, params.initial_sd**2
    for t in range(T):
        if t > 0:
            mp[t] = a * mf[t - 1]
            pp[t] = a * a * pf[t - 1] + q
        gain = pp[t] / (pp[t] + r)
        mf[t] = mp[t] + gain * (y[t] - mp[t])
        pf[t] = (1.0 - gain) * pp[t]
    ms, ps = mf.copy(), pf.copy()
    for t in range(T - 2, -1, -1):
        g = pf[t] * a / pp[t + 1]
        ms[t] = mf[t] + g * (ms[t + 1] - mp[t + 1])
        ps[t] = pf[t] + g * g * (ps[t + 1] - pp[t + 1])
    return KalmanResult(ms, ps, mf, pf)


# ---------------------------------------------------------------------------
# Observation files
# ---------------------------------------------------------------------------


def save_observations(path, y):
    """Write observations as CSV with columns ``t,y`` (t starting at 1)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for t, v in enumerate(np.asarray(y, dtype=float), start=1):
            w.writerow([t, repr(float(v))])


def load_observations(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    ts = [int(r["t"]) for r in rows]
    if ts != list(range(1, len(ts) + 1)):
        raise InvalidInputError("observation file must list t = 1, 2, ... in order")
    return np.array([float(r["y"]) for r in rows])
