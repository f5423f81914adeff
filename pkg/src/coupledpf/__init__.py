"""Conditional particle filters, their couplings and unbiased smoothing estimators."""

from .bounds import (
    BoundValue,
    DominatingChain,
    chat_mean_jensen_bound,
    chat_mean_lower_bound,
    coupling_tail_bound,
    estimator_cost_bounds,
    oneshot_coupling_bound,
    oneshot_rate_bound,
    sample_dominating,
    simulate_delta,
)
from .ccxpf import CoupledPair, CouplingRun, ccxpf_step, coupling_boundary, initial_pair, run_until_coupled
from .cxpf import ParticleSystem, Variant, cxpf_step, pf_trajectory
from .errors import (
    CapabilityError,
    CapacityError,
    ConfigError,
    DegenerateModelError,
    DegenerateWeightsError,
    InvalidInputError,
    InvalidParameterError,
    InvalidReferenceError,
)
from .harness import SweepConfig, run_sweep, summarize
from .models import (
    LGSSParams,
    MixingConstants,
    ModelSpec,
    exact_smoothing,
    kalman_smoother,
    make_discrete,
    make_homogeneous,
    make_lgss,
)
from .sampling import RandomStream, categorical, coupled_propose, cres
from .unbiased import EstimatorConfig, EstimatorRun, unbiased_estimate

__all__ = [
    "BoundValue", "DominatingChain", "chat_mean_jensen_bound", "chat_mean_lower_bound",
    "coupling_tail_bound", "estimator_cost_bounds", "oneshot_coupling_bound", "oneshot_rate_bound",
    "sample_dominating", "simulate_delta", "CoupledPair", "CouplingRun", "ccxpf_step",
    "coupling_boundary", "initial_pair", "run_until_coupled", "ParticleSystem", "Variant",
    "cxpf_step", "pf_trajectory", "CapabilityError", "CapacityError", "ConfigError",
    "DegenerateModelError", "DegenerateWeightsError", "InvalidInputError", "InvalidParameterError",
    "InvalidReferenceError", "SweepConfig", "run_sweep", "summarize", "LGSSParams",
    "MixingConstants", "ModelSpec", "exact_smoothing", "kalman_smoother", "make_discrete",
    "make_homogeneous", "make_lgss", "RandomStream", "categorical", "coupled_propose", "cres",
    "EstimatorConfig", "EstimatorRun", "unbiased_estimate",
]
