"""Unbiased smoothing estimates from a coupled pair of conditional filters.

The two chains are started so that ``S_0`` and ``S~_1`` have the same law
(``S~_0`` and ``S_{-1}`` from independent particle filters, ``S_0`` from one
coupled sweep of ``(S_{-1}, S_{-1})``).  The estimator

    Z = h(S_b) + sum_{k=b+1}^{n} [h(S_k) - h(S~_k)]

is output at the first ``n >= b`` with ``S_n = S~_n``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .ccxpf import ccxpf_step, initial_pair
from .cxpf import Variant, require_density
from .errors import InvalidParameterError
from .sampling import ITERATE, RandomStream


@dataclass(frozen=True)
class EstimatorConfig:
    """Burn-in ``b``, particle count ``N``, variant, iteration cap and test functions.

    ``functions`` is a mapping from names to callables ``h(trajectory) -> float``;
    a plain sequence is named ``h0, h1, ...``.
    """

    b: int
    N: int
    variant: Variant | str = Variant.BS
    cap: int = 10_000
    functions: Mapping[str, Callable] | Sequence[Callable] = field(default_factory=dict)
    crn: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        fns = self.functions
        if callable(fns):
            fns = {"h0": fns}
        elif not isinstance(fns, Mapping):
            fns = {f"h{i}": f for i, f in enumerate(fns)}
        object.__setattr__(self, "functions", dict(fns))
        if self.b < 1:
            raise InvalidParameterError("burn-in b must be at least 1")
        if self.N < 2:
            raise InvalidParameterError("N must be at least 2")
        if self.cap < self.b:
            raise InvalidParameterError("cap must be at least the burn-in b")
        if not self.functions:
            raise InvalidParameterError("at least one test function is required")


@dataclass
class EstimatorRun:
    """One replicate of the estimator.

    ``tau`` is the meeting time (first ``n`` with ``S_n = S~_n``), ``iterations``
    the number of coupled sweeps performed (``max(tau, b)`` when not censored).
    A censored run carries ``tau=None`` and no estimates.
    """

    estimates: dict
    tau: int | None
    iterations: int
    cap: int
    seed_path: str = ""
    wallclock_ns: int = 0

    @property
    def censored(self) -> bool:
        return self.tau is None

    def __getitem__(self, name):
        return self.estimates[name]


def unbiased_estimate(model, cfg: EstimatorConfig, stream: RandomStream) -> EstimatorRun:
    """Run one replicate of the coupled unbiased estimator."""
    if not isinstance(stream, RandomStream):
        stream = RandomStream(int(stream))
    require_density(model, cfg.variant)
    start = time.perf_counter_ns()
    names = list(cfg.functions)
    fns = [cfg.functions[k] for k in names]
    terms = [[] for _ in names]

    s, st = initial_pair(model, cfg.N, cfg.variant, stream, cfg.crn)
    tau = None
    n = 0
    while n < cfg.cap:
        n += 1
        pair = ccxpf_step(model, s, st, cfg.N, cfg.variant, stream.child(ITERATE, n), cfg.crn)
        s, st = pair.s, pair.s_tilde
        if tau is None and pair.coupled:
            tau = n
        if n == cfg.b:
            for acc, h in zip(terms, fns):
                acc.append(float(h(s)))
        elif n > cfg.b and tau is None:
            # Kept as separate terms so that fsum sums h(S_k) - h(S~_k) exactly.
            for acc, h in zip(terms, fns):
                acc.append(float(h(s)))
                acc.append(-float(h(st)))
        if tau is not None and n >= cfg.b:
            break
    elapsed = time.perf_counter_ns() - start
    if tau is None:
        return EstimatorRun({}, None, n, cfg.cap, stream.path_string(), elapsed)
    estimates = {k: math.fsum(acc) for k, acc in zip(names, terms)}
    return EstimatorRun(estimates, tau, n, cfg.cap, stream.path_string(), elapsed)


def replicate_estimates(model, cfg: EstimatorConfig, seed: int, replicates: int, offset: int = 0):
    """Independent replicates on streams ``(seed, (r,))``; returns the list of runs."""
    return [unbiased_estimate(model, cfg, RandomStream(seed, (r,))) for r in range(offset, offset + replicates)]


def summarize_estimates(runs) -> dict:
    """Mean and standard error per function over uncensored runs, plus the censored count."""
    done = [r for r in runs if not r.censored]
    out = {"replicates": len(runs), "censored": len(runs) - len(done)}
    if not done:
        return out
    for name in done[0].estimates:
        z = np.array([r.estimates[name] for r in done])
        se = float(z.std(ddof=1) / math.sqrt(len(z))) if len(z) > 1 else float("nan")
        out[name] = {"mean": float(z.mean()), "se": se}
    return out
