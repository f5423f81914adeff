"""Coupling-time sweeps over (variant, T, N) and their summaries.

A sweep runs, for every cell of the grid and every replicate, the two-chain
initialisation of the unbiased estimator followed by coupled sweeps until
the chains meet or the cap is reached.  Records are written as CSV with the
fixed header :data:`RECORD_FIELDS`, ordered by cell and then replicate, so
the file does not depend on the thread count.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .ccxpf import initial_pair, run_until_coupled
from .cxpf import Variant
from .errors import ConfigError, InvalidParameterError
from .models import load_observations, make_discrete, make_homogeneous, make_lgss
from .sampling import RandomStream

log = logging.getLogger(__name__)

RECORD_FIELDS = ["variant", "T", "N", "replicate", "tau", "censored", "wallclock_ns", "seed_path"]
SUMMARY_FIELDS = ["variant", "T", "N", "replicates", "censored", "errors", "mean_tau", "sd_tau",
                  "mean_cost", "excluded"]
OUTPUT_DIR_ENV = "COUPLEDPF_OUTPUT_DIR"

_VARIANT_ORDER = {v: i for i, v in enumerate(Variant)}


@dataclass(frozen=True)
class CapRule:
    """Iteration cap: ``absolute`` count, ``multiple`` of T, or ``budget`` divided by N T."""

    kind: str
    value: float

    @classmethod
    def parse(cls, rule) -> "CapRule":
        if isinstance(rule, CapRule):
            return rule
        if isinstance(rule, bool):
            raise ConfigError(f"invalid cap rule {rule!r}")
        if isinstance(rule, (int, np.integer)):
            return cls("absolute", int(rule))
        text = str(rule).strip().replace(" ", "")
        if re.fullmatch(r"\d+", text):
            return cls("absolute", int(text))
        m = re.fullmatch(r"(\d+(?:\.\d*)?)\*?T", text)
        if m:
            return cls("multiple", float(m.group(1)))
        m = re.fullmatch(r"budget:(.+)", text)
        if m:
            try:
                return cls("budget", float(m.group(1)))
            except ValueError:
                pass
        raise ConfigError(f"invalid cap rule {rule!r}; use an integer, '<k>T' or 'budget:<B>'")

    def resolve(self, T, N) -> int:
        if self.kind == "absolute":
            cap = int(self.value)
        elif self.kind == "multiple":
            cap = int(math.floor(self.value * T))
        else:
            cap = int(self.value // (N * T))
        if cap < 1:
            raise ConfigError(f"cap rule {self.kind}:{self.value} gives cap {cap} < 1 at T={T}, N={N}")
        return cap


@dataclass(frozen=True)
class SweepConfig:
    """Grid, model and run settings of a coupling-time sweep.

    ``model`` is a dict with key ``name`` (``lgss``, ``homogeneous`` or
    ``discrete``) and the model parameters.  ``timing=False`` writes zero
    wall-clock times so that repeated runs give identical files.
    """

    model: dict
    T: tuple
    N: tuple
    variants: tuple = (Variant.BS,)
    crn: bool = True
    replications: int = 1
    burn_in: int = 1
    cap: CapRule = CapRule("multiple", 10)
    seed: int = 0
    output: str = "sweep.csv"
    kappa_traces: bool = False
    timing: bool = True
    pf_particles: int | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "T", tuple(int(t) for t in _as_list(self.T)))
        set_(self, "N", tuple(int(n) for n in _as_list(self.N)))
        try:
            set_(self, "variants", tuple(v if isinstance(v, Variant) else Variant(str(v).upper())
                                          for v in _as_list(self.variants)))
        except ValueError as exc:
            raise ConfigError(f"unknown variant in {self.variants!r}") from exc
        set_(self, "cap", CapRule.parse(self.cap))
        if not (self.T and self.N and self.variants):
            raise ConfigError("T, N and variants must be nonempty")
        if any(t < 1 for t in self.T):
            raise ConfigError("every T must be at least 1")
        if any(n < 2 for n in self.N):
            raise ConfigError("every N must be at least 2")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.burn_in < 1:
            raise ConfigError("burn_in must be at least 1")
        if not isinstance(self.model, dict) or "name" not in self.model:
            raise ConfigError("model must be a mapping with a 'name'")
        for T in self.T:
            for N in self.N:
                self.cap.resolve(T, N)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        missing = {"model", "T", "N"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SweepConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    return [x]


def build_model(spec: dict, T: int):
    """Construct the model named in ``spec`` for horizon ``T``."""
    params = dict(spec)
    name = str(params.pop("name")).lower()
    try:
        if name == "lgss":
            obs_path = params.pop("observations", None)
            model, y = make_lgss(params.pop("ar"), params.pop("state_sd"), params.pop("obs_sd"), T,
                                 params.pop("seed", 0), **params)
            if obs_path is not None:
                y = load_observations(obs_path)
                if len(y) < T:
                    raise ConfigError(f"{obs_path} holds {len(y)} observations, need {T}")
                model = type(model)(model.params, y[:T], model.log_space)
            return model
        if name == "homogeneous":
            return make_homogeneous(params.pop("s"), T, **params)
        if name == "discrete":
            P = np.asarray(params.pop("transition_matrix"), dtype=float)
            return make_discrete(P.shape[0], P, params.pop("potentials"), T, **params)
    except KeyError as exc:
        raise ConfigError(f"model {name!r} is missing parameter {exc.args[0]!r}") from exc
    except (TypeError, InvalidParameterError) as exc:
        raise ConfigError(f"model {name!r}: {exc}") from exc
    raise ConfigError(f"unknown model {name!r}")


@dataclass
class SweepRecord:
    """One replicate of one cell.  Censored runs carry ``tau = cap``."""

    variant: str
    T: int
    N: int
    replicate: int
    tau: int | None
    censored: bool
    wallclock_ns: int
    seed_path: str
    error: str | None = None
    kappa_trace: list = field(default_factory=list)

    def row(self):
        if self.error is not None:
            return [self.variant, self.T, self.N, self.replicate, "", "error", self.wallclock_ns, self.seed_path]
        return [self.variant, self.T, self.N, self.replicate, self.tau, int(self.censored),
                self.wallclock_ns, self.seed_path]


def _cells(cfg: SweepConfig):
    return [(v, T, N) for v in cfg.variants for T in cfg.T for N in cfg.N]


def run_replicate(model, variant, N, cap, stream, crn=True, pf_particles=None, timing=True) -> SweepRecord:
    """Initialise two chains as the unbiased estimator does and iterate until they meet."""
    T = model.T
    rec = SweepRecord(variant.value, T, N, stream.path[-1] if stream.path else 0, None, False, 0,
                      stream.path_string())
    try:
        s0, s0t = initial_pair(model, N, variant, stream, crn, pf_particles)
        run = run_until_coupled(model, s0, s0t, N, variant, cap, stream, crn)
    except Exception as exc:  # recorded per replicate, never fatal to the sweep
        log.warning("replicate %s failed: %s", stream.path_string(), exc)
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.censored = run.censored
    rec.tau = cap if run.censored else run.tau
    rec.wallclock_ns = run.wallclock_ns if timing else 0
    rec.kappa_trace = run.kappa_trace
    return rec


def run_sweep(cfg: SweepConfig, threads: int = 1) -> list[SweepRecord]:
    """Run every replicate of every cell; records come back in cell then replicate order.

    Replicate ``r`` of cell ``(variant, T, N)`` uses stream
    ``(seed, (variant index, T, N, r))``.
    """
    models = {T: build_model(cfg.model, T) for T in cfg.T}
    tasks = []
    for v, T, N in _cells(cfg):
        cap = cfg.cap.resolve(T, N)
        for r in range(cfg.replications):
            stream = RandomStream(cfg.seed, (_VARIANT_ORDER[v], T, N, r))
            tasks.append((models[T], v, N, cap, stream))

    def work(task):
        model, v, N, cap, stream = task
        return run_replicate(model, v, N, cap, stream, cfg.crn, cfg.pf_particles, cfg.timing)

    if threads <= 1:
        return [work(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, tasks))


def resolve_output(path) -> Path:
    """Relative output paths are placed under ``$COUPLEDPF_OUTPUT_DIR`` when it is set."""
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_records(records, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow(rec.row())
    return path


def write_kappa_traces(records, path) -> Path:
    """Side file with one row per iteration: variant,T,N,replicate,iteration,kappa."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "T", "N", "replicate", "iteration", "kappa"])
        for rec in records:
            for n, k in enumerate(rec.kappa_trace, start=1):
                w.writerow([rec.variant, rec.T, rec.N, rec.replicate, n, k])
    return path


def read_records(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_FIELDS:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def _as_row(rec):
    if isinstance(rec, SweepRecord):
        return dict(zip(RECORD_FIELDS, rec.row()))
    return rec


@dataclass
class CellSummary:
    variant: str
    T: int
    N: int
    replicates: int
    censored: int
    errors: int
    mean_tau: float | None
    sd_tau: float | None
    mean_cost: float | None

    @property
    def excluded(self) -> bool:
        """A cell with any censored or failed replicate is excluded from comparisons."""
        return self.censored > 0 or self.errors > 0

    def row(self):
        def fmt(x):
            return "" if x is None else repr(float(x))
        return [self.variant, self.T, self.N, self.replicates, self.censored, self.errors,
                fmt(self.mean_tau), fmt(self.sd_tau), fmt(self.mean_cost), int(self.excluded)]


def summarize(records) -> list[CellSummary]:
    """Per-cell mean and sample sd of tau over uncensored replicates, censoring counts and mean N tau / T.

    Accepts :class:`SweepRecord` objects or rows read back from CSV.
    """
    cells = {}
    for rec in map(_as_row, records):
        key = (str(rec["variant"]), int(rec["T"]), int(rec["N"]))
        cells.setdefault(key, []).append(rec)
    out = []
    for (v, T, N), rows in sorted(cells.items(), key=lambda kv: (_VARIANT_ORDER.get(Variant(kv[0][0]), 99),
                                                                   kv[0][1], kv[0][2])):
        errors = sum(str(r["censored"]) == "error" for r in rows)
        censored = sum(str(r["censored"]) == "1" for r in rows)
        taus = np.array([float(r["tau"]) for r in rows if str(r["censored"]) == "0"])
        mean = float(taus.mean()) if taus.size else None
        sd = float(taus.std(ddof=1)) if taus.size > 1 else None
        cost = float((N * taus / T).mean()) if taus.size else None
        out.append(CellSummary(v, T, N, len(rows), censored, errors, mean, sd, cost))
    return out


def write_summary(summary, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for cell in summary:
            w.writerow(cell.row())
    return path


def run_config(cfg: SweepConfig, threads: int = 1, output=None) -> Path:
    """Run a sweep and write its CSV (and κ-trace side file when configured)."""
    out = resolve_output(output if output is not None else cfg.output)
    records = run_sweep(cfg, threads)
    write_records(records, out)
    if cfg.kappa_traces:
        write_kappa_traces(records, out.with_suffix(".kappa.csv"))
    return out
