import dataclasses

import numpy as np
import pytest
from scipy import stats

from coupledpf.bounds import increment_domination, sample_dominating
from coupledpf.ccxpf import ccxpf_step, coupling_boundary, initial_pair, run_until_coupled
from coupledpf.cxpf import cxpf_step, pf_trajectory
from coupledpf.errors import CapabilityError, InvalidInputError
from coupledpf.models import HomogeneousModel, exact_smoothing, make_homogeneous, make_lgss
from coupledpf.sampling import RandomStream

from conftest import mixing_model

VARIANTS = ["AT", "AS", "BS"]


def _two_sample_pvalue(table, a, b):
    ia, ib = table.index_of(a), table.index_of(b)
    n = len(table.probs)
    counts = np.stack([np.bincount(ia, minlength=n), np.bincount(ib, minlength=n)])
    counts = counts[:, counts.sum(axis=0) > 0]
    return stats.chi2_contingency(counts)[1]


def _kappa_pairs(model, N, reps, seed):
    """(kappa_n, kappa_{n+1}) pairs from BS chains started at independent filter draws."""
    before, after = [], []
    for r in range(reps):
        st = RandomStream(seed, (r,))
        s = pf_trajectory(model, N, st.child(0))
        s_t = pf_trajectory(model, N, st.child(1))
        k = coupling_boundary(s, s_t)
        run = run_until_coupled(model, s, s_t, N, "BS", 200, st.child(2))
        for k_next in run.kappa_trace:
            before.append(k)
            after.append(k_next)
            k = k_next
    return np.array(before), np.array(after)


# ---------------------------------------------------------------- boundary


@pytest.mark.parametrize("a,b,k", [
    ([1, 2, 3], [1, 2, 3], 3),
    ([1, 2, 3], [1, 2, 4], 2),
    ([0, 2, 3], [1, 2, 3], 0),
])
def test_coupling_boundary_examples(a, b, k):
    assert coupling_boundary(np.array(a), np.array(b)) == k


def test_coupling_boundary_length_mismatch():
    with pytest.raises(InvalidInputError):
        coupling_boundary(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- faithfulness


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("compiled", [True, False])
def test_equal_references_give_equal_outputs(variant, compiled):
    model, _ = make_lgss(0.9, 1.0, 1.0, 25, seed=2)
    s = pf_trajectory(model, 32, RandomStream(0))
    for crn in (True, False):
        pair = ccxpf_step(model, s, s.copy(), 16, variant, RandomStream(1), crn=crn, compiled=compiled)
        assert pair.s.tobytes() == pair.s_tilde.tobytes()
        assert pair.kappa == 25 and pair.coupled


def test_equal_starts_couple_at_first_iteration():
    model = make_homogeneous(10.0, 50)
    s = pf_trajectory(model, 32, RandomStream(3))
    run = run_until_coupled(model, s, s.copy(), 16, "BS", 10, RandomStream(4))
    assert run.tau == 1 and run.kappa_trace == [50]


def test_absorption_once_coupled():
    model = mixing_model(4)
    s = pf_trajectory(model, 8, RandomStream(5))
    for variant in VARIANTS:
        for n in range(20):
            pair = ccxpf_step(model, s, s.copy(), 8, variant, RandomStream(6, (n,)))
            assert pair.coupled
            s = pair.s


# ---------------------------------------------------------------- compiled sweep


@pytest.mark.parametrize("name", ["lgss", "homogeneous", "discrete"])
@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("crn", [True, False])
def test_compiled_sweep_reproduces_reference_implementation(name, variant, crn):
    model = {
        "lgss": lambda: make_lgss(0.9, 1.0, 1.0, 30, seed=1)[0],
        "homogeneous": lambda: make_homogeneous(2.0, 30),
        "discrete": lambda: mixing_model(8),
    }[name]()
    s = pf_trajectory(model, 16, RandomStream(1))
    s_t = pf_trajectory(model, 16, RandomStream(2))
    for n in range(15):
        a = ccxpf_step(model, s, s_t, 16, variant, RandomStream(3, (n,)), crn)
        b = ccxpf_step(model, s, s_t, 16, variant, RandomStream(3, (n,)), crn, diagnostics=True, compiled=False)
        assert a.s.tobytes() == b.s.tobytes() and a.s_tilde.tobytes() == b.s_tilde.tobytes()
        np.testing.assert_array_equal(a.coupled_counts, b.coupled_counts)
        s, s_t = a.s, a.s_tilde


def test_coupled_counts_are_full_when_references_agree():
    model = mixing_model(4)
    s = np.array([0, 1, 2, 0])
    pair = ccxpf_step(model, s, s, 8, "BS", RandomStream(0), diagnostics=True, compiled=False)
    assert pair.coupled_counts.tolist() == [8] * 4


# ---------------------------------------------------------------- marginals


@pytest.mark.parametrize("variant", VARIANTS)
def test_coupled_output_has_single_chain_marginal(variant):
    model = mixing_model(4)
    table = exact_smoothing(model)
    s = np.array([0, 0, 0, 0])
    s_t = np.array([2, 1, 2, 1])
    n = 15_000
    coupled = np.array([ccxpf_step(model, s, s_t, 8, variant, RandomStream(10, (k,))).s for k in range(n)])
    # ancestor sampling targets the backward-sampling kernel's law
    single_variant = "BS" if variant == "AS" else variant
    single = np.array([cxpf_step(model, s, 8, single_variant, RandomStream(11, (k,))) for k in range(n)])
    assert _two_sample_pvalue(table, coupled, single) > 1e-3


def test_tilde_side_marginal_matches_its_own_reference():
    model = mixing_model(4)
    table = exact_smoothing(model)
    s = np.array([0, 0, 0, 0])
    s_t = np.array([2, 1, 2, 1])
    n = 15_000
    coupled = np.array([ccxpf_step(model, s, s_t, 8, "BS", RandomStream(12, (k,))).s_tilde for k in range(n)])
    single = np.array([cxpf_step(model, s_t, 8, "BS", RandomStream(13, (k,))) for k in range(n)])
    assert _two_sample_pvalue(table, coupled, single) > 1e-3


# ---------------------------------------------------------------- coupling


def test_backward_sampling_couples_within_cap():
    model = mixing_model(4)
    taus = []
    for r in range(1000):
        st = RandomStream(14, (r,))
        run = run_until_coupled(model, np.zeros(4, dtype=np.int64), np.full(4, 2), 8, "BS", 200, st)
        taus.append(run.tau)
    assert None not in taus


def test_homogeneous_backward_sampling_never_censored():
    T = 500
    model = make_homogeneous(10.0, T)
    for r in range(10):
        st = RandomStream(15, (r,))
        s0, s0_t = initial_pair(model, 128, "BS", st)
        run = run_until_coupled(model, s0, s0_t, 128, "BS", 10 * T, st)
        assert not run.censored and run.tau <= 10 * T


def test_boundary_increments_dominated_by_auxiliary_chain():
    model = mixing_model(4)
    mc = model.mixing_constants()
    N = 16
    before, after = _kappa_pairs(model, N, 300, seed=16)
    draws = sample_dominating(N, mc.delta, mc.epsilon, before.size, RandomStream(17)).delta
    res = increment_domination(after - before, before, model.T, draws)
    assert res.ok, res.worst_excess


def test_run_until_coupled_reports_censoring():
    model = make_homogeneous(10.0, 200)
    s0 = pf_trajectory(model, 8, RandomStream(18))
    s0_t = pf_trajectory(model, 8, RandomStream(19))
    run = run_until_coupled(model, s0, s0_t, 2, "AT", 1, RandomStream(20))
    assert run.censored and run.tau is None
    assert run.cap == 1 and len(run.kappa_trace) == 1


# ---------------------------------------------------------------- errors


def test_step_argument_errors():
    model = mixing_model(3)
    s = np.zeros(3, dtype=np.int64)
    with pytest.raises(InvalidInputError):
        ccxpf_step(model, s, s, 1, "BS", RandomStream(0))
    with pytest.raises(InvalidInputError):
        ccxpf_step(model, s, np.zeros(2, dtype=np.int64), 4, "BS", RandomStream(0))
    with pytest.raises(InvalidInputError):
        run_until_coupled(model, s, s, 4, "BS", 0, RandomStream(0))
    with pytest.raises(ValueError):
        ccxpf_step(model, s, s, 4, "XX", RandomStream(0))


def test_density_free_model_only_supports_tracing():
    @dataclasses.dataclass(frozen=True)
    class NoDensity(HomogeneousModel):
        has_density = False

        def kernel_spec(self):
            return None

    model = NoDensity(10.0, 3)
    s = np.zeros(3)
    assert ccxpf_step(model, s, s, 4, "AT", RandomStream(0)).coupled
    for variant in ("AS", "BS"):
        with pytest.raises(CapabilityError):
            ccxpf_step(model, s, s, 4, variant, RandomStream(0))
