"""Dominating chain for the coupling boundary and closed-form bound evaluators.

Under strong mixing the growth of the coupling boundary of the coupled
backward-sampling filter dominates a random variable Delta built from an
auxiliary chain:

* C_1 = N - 1 and C_{s+1} ~ Binom(N - 1, dC_s / (dC_s + N - C_s)) until C = 0,
* xi_s = 0 and, going down in t, xi_t ~ Bernoulli(p_t) with
  p_t = e C_t / N after a zero and C_t e / (C_t e + N - C_t) after a one
  (C_t = N for t <= 0),
* Delta = min{i : xi_i = 0} - 1.

Below t = 1 a one is absorbing and a zero repeats with probability 1 - e,
so the t <= 0 segment is drawn as a geometric variable instead of looping.

Bound evaluators work in log space and return :class:`BoundValue`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .sampling import RandomStream, as_generator


def _check_chain_params(N, delta, epsilon):
    if N < 2:
        raise InvalidParameterError("N must be at least 2")
    if not 0 < epsilon <= delta <= 1:
        raise InvalidParameterError(f"need 0 < epsilon <= delta <= 1, got delta={delta}, epsilon={epsilon}")


@dataclass
class DominatingChain:
    """One realisation of the auxiliary chain.

    ``chat[k]`` is C_{k+1} for k = 0..s-1 (so ``chat[-1] == 0``), ``xi[k]`` is
    xi_{k+1}, and ``tail_zeros`` counts the zeros drawn at t <= 0.
    """

    N: int
    delta_param: float
    epsilon: float
    chat: np.ndarray
    xi: np.ndarray
    tail_zeros: int
    delta: int

    @property
    def delta_N(self) -> float:
        return (self.N - 1) * self.delta_param / self.N


def _p_one(c, N, epsilon):
    return c * epsilon / (c * epsilon + N - c)


def simulate_delta(N, delta, epsilon, stream, return_chain=False):
    """Draw Delta by running the three-step procedure literally (one draw)."""
    _check_chain_params(N, delta, epsilon)
    rng = as_generator(stream)
    chat = [N - 1]
    while chat[-1] > 0:
        c = chat[-1]
        chat.append(int(rng.binomial(N - 1, delta * c / (delta * c + N - c))))
    s = len(chat)
    xi = np.zeros(s, dtype=np.int8)
    for t in range(s - 2, -1, -1):
        c = chat[t]
        p = _p_one(c, N, epsilon) if xi[t + 1] else epsilon * c / N
        xi[t] = rng.random() < p
    tail = 0
    if xi[0]:
        value = int(np.argmin(xi))  # first zero at time index+1, minus one
    else:
        # zeros continue below t = 1 with probability 1 - epsilon each
        tail = int(rng.geometric(epsilon)) - 1
        value = -tail
    if return_chain:
        return DominatingChain(N, delta, epsilon, np.array(chat), xi, tail, value)
    return value


@dataclass
class DominatingSample:
    """Many independent draws: ``delta`` values and the first columns of C_t."""

    delta: np.ndarray
    chat: np.ndarray  # shape (n, horizon); column k holds C_{k+1}
    lengths: np.ndarray  # s for each draw


def sample_dominating(N, delta, epsilon, n, stream, horizon=0, chunk=20_000) -> DominatingSample:
    """Vectorised draws of Delta (same law as :func:`simulate_delta`).

    Cost per draw is the chain length s, roughly log(N)/log(1/delta) for
    delta < 1 but of order N log N when delta = 1.
    """
    _check_chain_params(N, delta, epsilon)
    rng = as_generator(stream)
    out_delta = np.empty(n, dtype=np.int64)
    out_chat = np.zeros((n, horizon), dtype=np.int64)
    out_len = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        m = min(chunk, n - lo)
        cur = np.full(m, N - 1, dtype=np.int64)
        rows = [cur]
        while cur.any():
            p = delta * cur / (delta * cur + (N - cur))
            cur = rng.binomial(N - 1, p)
            rows.append(cur)
        C = np.stack(rows)  # (L, m), last row all zero
        L = C.shape[0]
        h = min(horizon, L)
        out_chat[lo:lo + m, :h] = C[:h].T
        out_len[lo:lo + m] = (C > 0).sum(axis=0) + 1
        prev = np.zeros(m, dtype=bool)
        first_zero = np.full(m, L, dtype=np.int64)
        for k in range(L - 2, -1, -1):
            c = C[k]
            p = np.where(prev, _p_one(c, N, epsilon), epsilon * c / N)
            x = rng.random(m) < p
            first_zero[~x] = k + 1
            prev = x
        tail = rng.geometric(epsilon, size=m) - 1
        out_delta[lo:lo + m] = np.where(prev, first_zero - 1, -tail)
    return DominatingSample(out_delta, out_chat, out_len)


# ---------------------------------------------------------------- evaluators


@dataclass(frozen=True)
class BoundValue:
    """A bound with its parameters, log value and linear value.

    ``log_value`` is nan when the value is not positive.  ``vacuous`` marks
    a probability bound outside [0, 1] or a lower bound below zero.
    """

    name: str
    params: dict = field(default_factory=dict)
    log_value: float = math.nan
    value: float = math.nan
    vacuous: bool = False

    def __float__(self):
        return float(self.value)


def _from_log(name, params, log_value, vacuous=False):
    value = math.exp(log_value) if log_value < 709 else math.inf
    return BoundValue(name, dict(params), log_value, value, vacuous)


def _from_value(name, params, value, vacuous=False):
    log_value = math.log(value) if value > 0 else math.nan
    return BoundValue(name, dict(params), log_value, value, vacuous)


def chat_mean_lower_bound(N, delta, t) -> float:
    """Lower bound d^{t-1}(N-1) / (1 + d^{t-1}(N-1)) on E[C_t / N], d = (N-1)delta/N."""
    if N < 2 or t < 1 or not 0 < delta <= 1:
        raise InvalidParameterError("need N >= 2, t >= 1 and 0 < delta <= 1")
    dn = (N - 1) * delta / N
    x = dn ** (t - 1) * (N - 1)
    return x / (1.0 + x)


def chat_mean_jensen_bound(N, delta, t) -> float:
    """Lower bound on E[C_t / N] from the convexity recursion, before its final simplification.

    Equals d^{t-1} r / (1 - lam r) with r = (N-1)/N, d = r delta and
    lam = (1 - delta)(1 - d^{t-1})/(1 - d).  Exact when delta = 1 or t <= 2.
    :func:`chat_mean_lower_bound` is not implied by it (it can be larger
    than the true mean).
    """
    if N < 2 or t < 1 or not 0 < delta <= 1:
        raise InvalidParameterError("need N >= 2, t >= 1 and 0 < delta <= 1")
    r = (N - 1) / N
    dn = r * delta
    x = dn ** (t - 1)
    lam = (1.0 - delta) * (1.0 - x) / (1.0 - dn)
    return x * r / (1.0 - lam * r)


def coupling_tail_bound(alpha, beta, T, n) -> BoundValue:
    """Geometric tail alpha^T beta^-n on P(tau >= n); also bounds the total variation after n sweeps."""
    if alpha <= 1 or beta <= 1:
        raise InvalidParameterError("need alpha > 1 and beta > 1")
    logv = T * math.log(alpha) - n * math.log(beta)
    return _from_log("coupling_tail", {"alpha": alpha, "beta": beta, "T": T, "n": n}, logv, vacuous=logv > 0)


def oneshot_coupling_bound(c, N) -> BoundValue:
    """Lower bound 1 - c/(N + c) on the one-shot coupling probability."""
    if c <= 0 or N < 2:
        raise InvalidParameterError("need c > 0 and N >= 2")
    return _from_value("oneshot_coupling", {"c": c, "N": N}, N / (N + c))


def oneshot_rate_bound(c_star, N, T) -> BoundValue:
    """Strong-mixing one-shot bound 1 - 2^T T / ((2 c_*)^-1 (N - 1) + 1); may be negative."""
    if c_star <= 0 or N < 2 or T < 1:
        raise InvalidParameterError("need c_* > 0, N >= 2 and T >= 1")
    log_ratio = T * math.log(2.0) + math.log(T) - math.log((N - 1) / (2.0 * c_star) + 1.0)
    value = 1.0 - math.exp(log_ratio) if log_ratio < 709 else -math.inf
    return _from_value("oneshot_rate", {"c_star": c_star, "N": N, "T": T}, value, vacuous=value < 0)


def c_star_from_epsilon(epsilon) -> float:
    """Constant c_* = 1/epsilon implied by strong mixing."""
    if not 0 < epsilon <= 1:
        raise InvalidParameterError("epsilon must lie in (0, 1]")
    return 1.0 / epsilon


def index_coupling_bounds(N, epsilon, n_coupled):
    """Per-index and coupled-set probabilities of the maximal coupling under weight ratio epsilon.

    Returns ``(epsilon / N, |C| e / (|C| e + N - |C|))``.
    """
    if not 0 <= n_coupled <= N:
        raise InvalidParameterError("coupled set size must lie in 0..N")
    c = n_coupled
    return epsilon / N, _p_one(c, N, epsilon)


def estimator_cost_bounds(alpha, beta, rho, T, b, N, c, h_norm=1.0) -> dict:
    """Cost bounds for the unbiased estimator.

    * ``expected_tau``: m + alpha^T beta^-m / (beta - 1) with m = max(b, ceil(rho T)),
    * ``variance_gap``: 16 alpha^T (1 - 1/beta)^-2 beta^(-b/2) ||h||^2,
    * ``expected_tau_oneshot``: b + (c/(N+c))^(b-1) (N+c)/N,
    * ``variance_gap_oneshot``: 16 ||h||^2 ((N+c)/N)^2 (c/(N+c))^(b/2).
    """
    if alpha <= 1 or beta <= 1 or rho <= 0 or b < 1 or N < 1 or c <= 0:
        raise InvalidParameterError("parameters outside admissible range")
    params = {"alpha": alpha, "beta": beta, "rho": rho, "T": T, "b": b, "N": N, "c": c, "h_norm": h_norm}
    la, lb = math.log(alpha), math.log(beta)
    m = max(b, math.ceil(rho * T))
    tail = T * la - m * lb - math.log(beta - 1.0)
    expected_tau = math.log(m + math.exp(tail)) if tail < 709 else tail
    var_gap = (math.log(16.0) + T * la - 2 * math.log1p(-1.0 / beta) - 0.5 * b * lb
               + 2 * math.log(h_norm) if h_norm > 0 else -math.inf)
    q = math.log(c) - math.log(N + c)
    scale = math.log(N + c) - math.log(N)
    tau1 = math.log(b + math.exp((b - 1) * q + scale))
    var1 = math.log(16.0) + 2 * scale + 0.5 * b * q + (2 * math.log(h_norm) if h_norm > 0 else -math.inf)
    return {
        "expected_tau": _from_log("expected_tau", params, expected_tau),
        "variance_gap": _from_log("variance_gap", params, var_gap),
        "expected_tau_oneshot": _from_log("expected_tau_oneshot", params, tau1),
        "variance_gap_oneshot": _from_log("variance_gap_oneshot", params, var1),
    }


# ------------------------------------------------------------- diagnostics


@dataclass
class DriftCheck:
    N: int
    mean_delta: float
    mean_alpha_pow: float
    se_delta: float
    se_alpha_pow: float
    ok: bool


def drift_cutoff(delta, epsilon, alpha, beta, stream, draws=20_000, max_log2=14):
    """Smallest N in {2, 4, ..., 2^max_log2} with E[Delta] >= beta and E[alpha^-Delta] <= 1/beta.

    Monte Carlo point estimates decide; returns ``(N or None, checks)``.
    """
    if not 1 < alpha < (1.0 / (1.0 - epsilon) if epsilon < 1 else math.inf):
        raise InvalidParameterError("alpha must lie in (1, 1/(1-epsilon))")
    if beta <= 1:
        raise InvalidParameterError("beta must exceed 1")
    base = stream if isinstance(stream, RandomStream) else RandomStream(int(stream))
    checks = []
    for k in range(1, max_log2 + 1):
        N = 2**k
        d = sample_dominating(N, delta, epsilon, draws, base.child(k)).delta
        ap = alpha ** (-d.astype(float))
        chk = DriftCheck(N, float(d.mean()), float(ap.mean()),
                         float(d.std(ddof=1) / math.sqrt(draws)), float(ap.std(ddof=1) / math.sqrt(draws)),
                         bool(d.mean() >= beta and ap.mean() <= 1.0 / beta))
        checks.append(chk)
        if chk.ok:
            return N, checks
    return None, checks


def chat_cutoff(N, delta, stream, draws=20_000, horizon=200, level=0.5):
    """First t at which the Monte Carlo mean of C_t / N drops below ``level`` (None if never within ``horizon``)."""
    sample = sample_dominating(N, delta, delta, draws, stream, horizon=horizon)
    means = sample.chat.mean(axis=0) / N
    below = np.flatnonzero(means < level)
    return (int(below[0]) + 1 if below.size else None), means


def chat_cutoff_table(delta, Ns, stream, draws=20_000, horizon=200, level=0.5):
    """Rows ``(N, cutoff(N), N', cutoff(N'), shift)`` with N' = round(N / delta).

    Multiplying N by 1/delta is expected to move the cutoff by one step.
    """
    base = stream if isinstance(stream, RandomStream) else RandomStream(int(stream))
    rows = []
    for i, N in enumerate(Ns):
        N2 = int(round(N / delta))
        c1, _ = chat_cutoff(N, delta, base.child(i, 0), draws, horizon, level)
        c2, _ = chat_cutoff(N2, delta, base.child(i, 1), draws, horizon, level)
        shift = None if c1 is None or c2 is None else c2 - c1
        rows.append((N, c1, N2, c2, shift))
    return rows


@dataclass
class DominationResult:
    grid: np.ndarray
    observed_cdf: np.ndarray
    dominating_cdf: np.ndarray
    band: np.ndarray
    ok: bool

    @property
    def worst_excess(self) -> float:
        """Largest observed-minus-dominating CDF gap in units of the band."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.observed_cdf - self.dominating_cdf) / self.band
        z = np.where(self.band > 0, z, np.where(self.observed_cdf > self.dominating_cdf, np.inf, -np.inf))
        return float(z.max())


def increment_domination(increments, kappa_before, T, delta_draws, n_sigma=3.0) -> DominationResult:
    """Compare boundary increments with Delta capped at the remaining horizon.

    Each observed increment ``kappa_{n+1} - kappa_n`` is paired with one
    Delta draw capped at ``T - kappa_n``.  The increments dominate when
    their empirical CDF lies at or below that of the capped draws, up to
    ``n_sigma`` standard errors of the difference.
    """
    inc = np.asarray(increments)
    kb = np.asarray(kappa_before)
    d = np.asarray(delta_draws)[: inc.size]
    if d.size < inc.size:
        raise InvalidParameterError("need one Delta draw per observed increment")
    capped = np.minimum(d, T - kb)
    grid = np.arange(min(inc.min(), capped.min()), max(inc.max(), capped.max()) + 1)
    F_obs = (inc[:, None] <= grid).mean(axis=0)
    F_dom = (capped[:, None] <= grid).mean(axis=0)
    n = inc.size
    band = n_sigma * np.sqrt((F_obs * (1 - F_obs) + F_dom * (1 - F_dom)) / n)
    ok = bool(np.all(F_obs <= F_dom + np.maximum(band, 1.0 / n)))
    return DominationResult(grid, F_obs, F_dom, band, ok)


# ------------------------------------------------------------- tables


def evaluate_bound(spec: dict):
    """Evaluate one bound from a dict ``{"bound": name, **params}``; returns a list of BoundValue."""
    spec = dict(spec)
    name = spec.pop("bound", None)
    try:
        if name == "coupling_tail":
            return [coupling_tail_bound(**spec)]
        if name == "oneshot_rate":
            return [oneshot_rate_bound(**spec)]
        if name == "oneshot_coupling":
            return [oneshot_coupling_bound(**spec)]
        if name == "chat_mean":
            v = chat_mean_lower_bound(**spec)
            return [_from_value("chat_mean", spec, v)]
        if name == "estimator_cost":
            return list(estimator_cost_bounds(**spec).values())
        if name == "c_star":
            return [_from_value("c_star", spec, c_star_from_epsilon(**spec))]
    except TypeError as exc:
        raise InvalidParameterError(f"bad parameters for bound {name!r}: {exc}") from exc
    raise InvalidParameterError(f"unknown bound {name!r}")


def _format_params(params):
    return ";".join(f"{k}={v}" for k, v in params.items())


def write_bounds_csv(values, path):
    """Write bounds as CSV with columns bound,params,log_value,value,vacuous."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bound", "params", "log_value", "value", "vacuous"])
        for v in values:
            w.writerow([v.name, _format_params(v.params), repr(v.log_value), repr(v.value), int(v.vacuous)])
    return path
