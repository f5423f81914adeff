import numpy as np
import pytest
from scipy import stats

from coupledpf.cxpf import Variant, cxpf_step, forward_pass, pf_trajectory
from coupledpf.errors import (
    CapabilityError,
    DegenerateWeightsError,
    InvalidInputError,
    InvalidReferenceError,
)
from coupledpf.models import ModelSpec, exact_smoothing, make_discrete, make_homogeneous, make_lgss
from coupledpf.sampling import RandomStream

from conftest import empirical_law, mixing_model, tv_distance


def _one_step_law(model, variant, n, seed, N=8):
    """Trajectory law after one kernel step from exact draws of the smoothing law."""
    table = exact_smoothing(model)
    trajs = table.trajectories
    start = RandomStream(seed).generator().choice(len(table.probs), size=n, p=table.probs)
    out = [cxpf_step(model, trajs[k], N, variant, RandomStream(seed, (r,))) for r, k in enumerate(start)]
    return table, empirical_law(table, out)


# ---------------------------------------------------------------- particle filter


def test_pf_on_single_state_model_returns_unique_trajectory():
    model = make_discrete(1, [[1.0]], [1.0], 6)
    assert pf_trajectory(model, 5, RandomStream(0)).tolist() == [0] * 6


def test_pf_respects_indicator_support():
    model = make_homogeneous(10.0, 100)
    x = pf_trajectory(model, 64, RandomStream(1))
    assert x.shape == (100,) and np.all(np.abs(x) <= 10.0)


def test_pf_with_one_particle_is_the_simulated_path():
    model, _ = make_lgss(0.9, 1.0, 1.0, 20, seed=0)
    x = pf_trajectory(model, 1, RandomStream(2))
    rng = RandomStream(2).generator()
    rng.random((20, 1))
    e = model.base_draws(rng, (20, 1))[:, 0]
    path = np.empty(20)
    path[0] = model.initial(e[:1])[0]
    for t in range(1, 20):
        path[t] = model.transition(t, path[t - 1:t], e[t:t + 1])[0]
    np.testing.assert_array_equal(x, path)


def test_pf_degeneracy_names_the_step():
    model = make_homogeneous(1e-6, 5)
    with pytest.raises(DegenerateWeightsError) as info:
        pf_trajectory(model, 4, RandomStream(3))
    assert info.value.t == 0


def test_pf_rejects_zero_particles():
    with pytest.raises(InvalidInputError):
        pf_trajectory(mixing_model(2), 0, RandomStream(0))


# ---------------------------------------------------------------- conditional kernels


@pytest.mark.parametrize("variant", ["AT", "BS"])
def test_single_state_kernel_returns_reference(variant):
    model = make_discrete(1, [[1.0]], [1.0], 4)
    ref = np.zeros(4, dtype=np.int64)
    assert cxpf_step(model, ref, 3, variant, RandomStream(0)).tolist() == [0] * 4


def test_forward_pass_keeps_reference_in_slot_zero():
    model, _ = make_lgss(0.9, 1.0, 1.0, 15, seed=1)
    ref = pf_trajectory(model, 32, RandomStream(4))
    system = forward_pass(model, 16, RandomStream(5).generator(), ref)
    np.testing.assert_array_equal(system.states[:, 0], ref)
    assert np.all(system.ancestors[:, 0] == 0)
    # weights are the potentials of the stored states
    for t in range(15):
        np.testing.assert_allclose(system.weights[t], model.potential(t, None, system.states[t]))


def test_two_state_long_run_frequency(two_state_model):
    n = 100_000
    x = np.array([0])
    hits = 0
    for k in range(n):
        x = cxpf_step(two_state_model, x, 2, "BS", RandomStream(6, (k,)))
        hits += int(x[0])
    assert abs(hits / n - 0.75) <= 3 * np.sqrt(0.75 * 0.25 / n) * 3  # autocorrelated chain: widened band


@pytest.mark.parametrize("variant", ["AT", "BS"])
def test_kernel_leaves_smoothing_law_invariant(variant):
    # chi-square version of the invariance property, sized for the unit suite
    n = 20_000
    table, law = _one_step_law(mixing_model(4), variant, n, seed=7)
    assert stats.chisquare(law * n, table.probs * n).pvalue > 1e-3


def test_backward_sampling_with_two_particles_moves():
    model = mixing_model(4)
    ref = np.zeros(4, dtype=np.int64)
    moved = sum(not np.array_equal(cxpf_step(model, ref, 2, "BS", RandomStream(8, (k,))), ref) for k in range(200))
    assert moved > 0


def test_variants_agree_in_law_for_one_step_horizon():
    model = make_discrete(3, [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]], [[1.0, 0.5, 0.25]], 1)
    n = 20_000
    _, at = _one_step_law(model, "AT", n, seed=9, N=4)
    _, bs = _one_step_law(model, "BS", n, seed=10, N=4)
    assert tv_distance(at, bs) < 0.02


def test_kernel_argument_errors():
    model = mixing_model(3)
    ref = np.zeros(3, dtype=np.int64)
    with pytest.raises(InvalidInputError):
        cxpf_step(model, ref, 1, "AT", RandomStream(0))
    with pytest.raises(InvalidInputError):
        cxpf_step(model, ref, 4, Variant.AS, RandomStream(0))
    with pytest.raises(InvalidInputError):
        cxpf_step(model, np.zeros(2, dtype=np.int64), 4, "AT", RandomStream(0))


def test_zero_potential_reference_is_rejected():
    model = make_homogeneous(1.0, 3)
    with pytest.raises(InvalidReferenceError):
        cxpf_step(model, np.array([0.0, 5.0, 0.0]), 4, "BS", RandomStream(0))


def test_backward_sampling_needs_densities():
    class NoDensity(ModelSpec):
        T = 2
        has_density = False

        def base_draws(self, rng, size):
            return rng.standard_normal(size)

        def initial(self, u):
            return u

        def transition(self, t, x_prev, u):
            return x_prev + u

        def potential(self, t, x_prev, x):
            return np.ones(len(x))

    model = NoDensity()
    ref = np.zeros(2)
    assert cxpf_step(model, ref, 4, "AT", RandomStream(0)).shape == (2,)
    with pytest.raises(CapabilityError):
        cxpf_step(model, ref, 4, "BS", RandomStream(0))
