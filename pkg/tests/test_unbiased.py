import math

import numpy as np
import pytest
from scipy import stats

from coupledpf.ccxpf import ccxpf_step, initial_pair
from coupledpf.errors import InvalidParameterError
from coupledpf.models import exact_smoothing, make_discrete, make_lgss
from coupledpf.sampling import ITERATE, RandomStream
from coupledpf.unbiased import (
    EstimatorConfig,
    replicate_estimates,
    summarize_estimates,
    unbiased_estimate,
)

from conftest import mixing_model


def last_is_zero(x):
    return float(x[-1] == 0)


def test_single_state_model_is_exact():
    model = make_discrete(1, [[1.0]], [1.0], 5)
    run = unbiased_estimate(model, EstimatorConfig(b=1, N=4, functions={"n": lambda x: len(x)}), RandomStream(0))
    assert run.tau == 1 and run["n"] == 5.0 and not run.censored


def test_two_state_indicator_mean(two_state_model):
    n = 10_000
    cfg = EstimatorConfig(b=1, N=8, functions=lambda x: float(x[0] == 1))
    out = summarize_estimates(replicate_estimates(two_state_model, cfg, seed=1, replicates=n))
    assert out["censored"] == 0
    assert abs(out["h0"]["mean"] - 0.75) <= 3 * out["h0"]["se"]


def test_first_chain_is_started_one_step_ahead_in_law():
    # S_0 and S~_1 must have the same law
    model = mixing_model(4)
    table = exact_smoothing(model)
    n = 3000
    a, b = [], []
    for r in range(n):
        st = RandomStream(2, (r,))
        s0, s0_t = initial_pair(model, 8, "BS", st)
        s1_t = ccxpf_step(model, s0, s0_t, 8, "BS", st.child(ITERATE, 1)).s_tilde
        a.append(table.index_of(s0))
        b.append(table.index_of(s1_t))
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_early_coupling_returns_the_burn_in_value():
    model = mixing_model(4)
    b = 5
    cfg = EstimatorConfig(b=b, N=8, functions={"h": last_is_zero, "sum": lambda x: float(np.sum(x))})
    checked = 0
    for r in range(40):
        st = RandomStream(3, (r,))
        run = unbiased_estimate(model, cfg, st)
        if run.tau > b:
            continue
        s, s_t = initial_pair(model, 8, "BS", st)
        for k in range(1, b + 1):
            pair = ccxpf_step(model, s, s_t, 8, "BS", st.child(ITERATE, k))
            s, s_t = pair.s, pair.s_tilde
        assert run["h"] == last_is_zero(s) and run["sum"] == float(np.sum(s))
        assert run.iterations == b
        checked += 1
    assert checked > 0


def test_variance_approaches_smoothing_variance():
    model = mixing_model(4)
    table = exact_smoothing(model)
    mean = table.expectation(last_is_zero)
    var = table.expectation(lambda x: last_is_zero(x) ** 2) - mean**2
    cfg = EstimatorConfig(b=model.T // 2, N=8, functions={"h": last_is_zero})
    z = np.array([r["h"] for r in replicate_estimates(model, cfg, seed=4, replicates=10_000)])
    assert abs(z.var(ddof=1) / var - 1) < 0.10
    assert abs(z.mean() - mean) <= 3 * z.std(ddof=1) / math.sqrt(len(z))


def test_correction_terms_are_used_after_late_coupling():
    # with b = 1 some runs couple late and their estimates leave {0, 1}
    model = mixing_model(4)
    cfg = EstimatorConfig(b=1, N=2, functions={"h": last_is_zero})
    runs = replicate_estimates(model, cfg, seed=5, replicates=300)
    assert any(r.tau > 1 for r in runs)
    values = {r["h"] for r in runs}
    assert values - {0.0, 1.0}


def test_censored_run_has_no_estimates():
    model, _ = make_lgss(0.9, 1.0, 1.0, 50, seed=0)
    cfg = EstimatorConfig(b=1, N=4, variant="AT", cap=1, functions={"h": lambda x: x[0]})
    run = unbiased_estimate(model, cfg, RandomStream(6))
    assert run.censored and run.estimates == {} and run.iterations == 1
    out = summarize_estimates([run])
    assert out == {"replicates": 1, "censored": 1}


def test_estimates_are_reproducible():
    model = mixing_model(4)
    cfg = EstimatorConfig(b=1, N=4, functions={"h": last_is_zero})
    a = unbiased_estimate(model, cfg, RandomStream(7, (3,)))
    b = unbiased_estimate(model, cfg, RandomStream(7, (3,)))
    assert a.estimates == b.estimates and a.tau == b.tau and a.seed_path == b.seed_path


def test_sequence_of_functions_is_named_in_order():
    cfg = EstimatorConfig(b=1, N=2, functions=[lambda x: 0.0, lambda x: 1.0])
    assert list(cfg.functions) == ["h0", "h1"]


@pytest.mark.parametrize("kwargs", [
    dict(b=0, N=4),
    dict(b=1, N=1),
    dict(b=5, N=4, cap=4),
    dict(b=1, N=4, functions={}),
])
def test_config_validation(kwargs):
    kwargs.setdefault("functions", {"h": lambda x: 0.0})
    with pytest.raises(InvalidParameterError):
        EstimatorConfig(**kwargs)
