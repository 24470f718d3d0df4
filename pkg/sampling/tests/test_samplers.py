import numpy as np
import pytest
from django.core.exceptions import ValidationError

from sampling.coefficients import FamilyKind, family_from_name, plan_for_family
from sampling.samplers import (
    AnalyticState,
    EnsembleState,
    ReverseRun,
    init_state,
    one_step_from_truth,
    reverse_step,
    run_reverse,
)
from sampling.schedule import build_schedule, schedule_from_alphas
from sampling.scores import ScoreOracle
from sampling.services import InitKind, sample, true_law
from sampling.streams import RngPolicy
from sampling.targets import GaussianLaw, atom_mixture, diag_gaussian, low_rank_gaussian


@pytest.fixture
def step_at_09_05():
    """Two-step schedule whose step 2 has alpha_t = 0.9, alpha_bar_t = 0.5, alpha_bar_{t-1} = 5/9."""
    return schedule_from_alphas([5.0 / 9.0, 0.9])


def plan(s, name, **params):
    return plan_for_family(s, family_from_name(name, **params))


def test_analytic_init_is_standard_normal():
    state = init_state(5, analytic=True)
    np.testing.assert_array_equal(state.law.cov_diag, np.ones(5))
    np.testing.assert_array_equal(state.law.mean, np.zeros(5))


def test_ensemble_init_variance():
    state = init_state(1, n=100_000, streams=RngPolicy(1).family('t'))
    assert state.n == 100_000
    assert np.var(state.particles) == pytest.approx(1.0, rel=0.05)


def test_empty_ensemble_is_rejected():
    with pytest.raises(ValidationError) as excinfo:
        init_state(2, n=0, streams=RngPolicy(1).family('t'))
    assert excinfo.value.code == 'empty_ensemble'


def test_ddim_step_tracks_the_off_subspace_variance(step_at_09_05):
    s = step_at_09_05
    oracle = ScoreOracle(target=low_rank_gaussian(2, 1), schedule=s)
    state = AnalyticState(law=GaussianLaw.centered([1.0, 0.5]))
    out = reverse_step(state, 2, plan(s, FamilyKind.DDIM_ORIGINAL), oracle)
    assert out.law.cov_diag[1] == pytest.approx(4.0 / 9.0, abs=1e-14)


def test_zero_coefficients_miss_the_off_subspace_variance(step_at_09_05):
    s = step_at_09_05
    oracle = ScoreOracle(target=low_rank_gaussian(2, 1), schedule=s)
    state = AnalyticState(law=GaussianLaw.centered([1.0, 0.5]))
    zero = plan(s, FamilyKind.CUSTOM, eta=[0.0, 0.0], sigma=[0.0, 0.0])
    out = reverse_step(state, 2, zero, oracle)
    assert out.law.cov_diag[1] == pytest.approx(0.5 / 0.9, rel=1e-14)
    assert out.law.cov_diag[1] != pytest.approx(4.0 / 9.0)


def test_ddpm_step_tracks_a_pure_noise_coordinate():
    s = build_schedule(64)
    oracle = ScoreOracle(target=diag_gaussian([0.0]), schedule=s)
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    for t in (2, 30, 64):
        state = AnalyticState(law=GaussianLaw.centered([s.one_minus_alpha_bar_at(t)]))
        out = reverse_step(state, t, ddpm, oracle)
        assert out.law.cov_diag[0] == pytest.approx(s.one_minus_alpha_bar_at(t - 1), rel=1e-12)


def test_deterministic_step_draws_nothing():
    s = build_schedule(16)
    oracle = ScoreOracle(target=low_rank_gaussian(3, 1), schedule=s)
    ddim = plan(s, FamilyKind.DDIM_ORIGINAL)
    particles = np.random.default_rng(5).standard_normal((500, 3))
    first = RngPolicy(1).family('run')
    second = RngPolicy(2).family('run')
    a = reverse_step(EnsembleState(particles), 9, ddim, oracle, first)
    b = reverse_step(EnsembleState(particles), 9, ddim, oracle, second)
    assert a.particles.tobytes() == b.particles.tobytes()
    assert first.consumed == second.consumed == 0


def test_stochastic_step_draws_one_normal_per_coordinate():
    s = build_schedule(16)
    oracle = ScoreOracle(target=low_rank_gaussian(3, 1), schedule=s)
    streams = RngPolicy(1).family('run')
    state = EnsembleState(np.zeros((500, 3)))
    reverse_step(state, 9, plan(s, FamilyKind.DDPM_ORIGINAL), oracle, streams)
    assert streams.consumed == 1500


def test_step_one_is_not_a_reverse_step():
    s = build_schedule(16)
    oracle = ScoreOracle(target=low_rank_gaussian(1, 1), schedule=s)
    with pytest.raises(ValidationError) as excinfo:
        reverse_step(init_state(1, analytic=True), 1, plan(s, FamilyKind.DDPM_ORIGINAL), oracle)
    assert excinfo.value.code == 'invalid_step'


def test_two_step_horizon_runs_one_step():
    s = build_schedule(2, c0=2, c1=1)
    target = low_rank_gaussian(2, 1)
    run = sample(target, s, plan(s, FamilyKind.DDPM_ORIGINAL), analytic=True, record=True)
    assert [t for t, _ in run.trajectory] == [2, 1]


def test_exact_init_ddim_tracks_the_true_marginal():
    s = build_schedule(64)
    target = low_rank_gaussian(4, 2)
    run = sample(target, s, plan(s, FamilyKind.DDIM_ORIGINAL), analytic=True, init=InitKind.EXACT)
    np.testing.assert_allclose(run.state.law.cov_diag[2:], s.one_minus_alpha_bar_at(1), rtol=1e-12)
    np.testing.assert_allclose(run.state.law.cov_diag[2:], true_law(target, s, 1).cov_diag[2:], rtol=1e-12)


def test_recorded_trajectory_covers_every_step():
    s = build_schedule(16)
    run = sample(low_rank_gaussian(2, 1), s, plan(s, FamilyKind.DDIM_ORIGINAL), analytic=True, record=True)
    assert [t for t, _ in run.trajectory] == list(range(16, 0, -1))
    assert run.trajectory[-1][1] is run.state


def test_ensemble_agrees_with_analytic_propagation():
    s = build_schedule(16)
    target = low_rank_gaussian(2, 1)
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    exact = sample(target, s, ddpm, analytic=True)
    ensemble = sample(target, s, ddpm, analytic=False, n=100_000, streams=RngPolicy(3).family('sample'))
    np.testing.assert_allclose(np.var(ensemble.state.particles, axis=0), exact.state.law.cov_diag, rtol=0.05)
    np.testing.assert_allclose(np.mean(ensemble.state.particles, axis=0), 0.0, atol=0.02)


def test_same_seed_same_ensemble():
    s = build_schedule(16)
    target = low_rank_gaussian(2, 1)
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    runs = [
        sample(target, s, ddpm, analytic=False, n=2_000, streams=RngPolicy(9).family('sample'))
        for _ in range(2)
    ]
    assert runs[0].state.particles.tobytes() == runs[1].state.particles.tobytes()


def test_thread_count_does_not_change_the_ensemble(settings):
    settings.DIFFLAB_BLOCK_SIZE = 256
    s = build_schedule(16)
    target = low_rank_gaussian(3, 2)
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    serial = sample(target, s, ddpm, analytic=False, n=3_000, streams=RngPolicy(4).family('sample'))
    parallel = sample(
        target, s, ddpm, analytic=False, n=3_000, streams=RngPolicy(4).family('sample'), threads=4
    )
    assert serial.state.particles.tobytes() == parallel.state.particles.tobytes()


def test_analytic_run_of_a_mixture_is_unavailable():
    s = build_schedule(16)
    with pytest.raises(ValidationError) as excinfo:
        sample(atom_mixture([[-1.0], [1.0]]), s, plan(s, FamilyKind.DDPM_ORIGINAL), analytic=True)
    assert excinfo.value.code == 'analytic_unavailable'


def test_one_step_from_truth_matches_its_law(step_at_09_05):
    target = low_rank_gaussian(3, 1)
    particles, law = one_step_from_truth(
        target, step_at_09_05, 2, eta=0.05, sigma=0.3, n=100_000, streams=RngPolicy(2).family('one')
    )
    assert particles.shape == (100_000, 3)
    np.testing.assert_allclose(np.var(particles, axis=0), law.cov_diag, rtol=0.03)


def test_run_descriptor_is_immutable():
    s = build_schedule(16)
    target = low_rank_gaussian(1, 1)
    run = ReverseRun(
        schedule=s,
        plan=plan(s, FamilyKind.DDIM_ORIGINAL),
        oracle=ScoreOracle(target=target, schedule=s),
        state=init_state(1, analytic=True),
    )
    finished = run_reverse(run)
    assert finished is not run
    np.testing.assert_array_equal(run.state.law.cov_diag, [1.0])


@pytest.mark.parametrize("T", [64, 512])
def test_ddim_off_subspace_variance_is_exact_at_every_step(T):
    s = build_schedule(T)
    target = low_rank_gaussian(16, 2)
    run = sample(target, s, plan(s, FamilyKind.DDIM_ORIGINAL), analytic=True, init=InitKind.EXACT, record=True)
    for t, state in run.trajectory:
        np.testing.assert_allclose(state.law.cov_diag[2:], s.one_minus_alpha_bar_at(t), rtol=1e-12)


@pytest.mark.parametrize("T", [64, 2048])
def test_xi_zero_run_is_the_ddim_run(T):
    s = build_schedule(T)
    target = low_rank_gaussian(16, 2)
    ddim = sample(target, s, plan(s, FamilyKind.DDIM_ORIGINAL), analytic=True)
    xi0 = sample(target, s, plan(s, FamilyKind.GENERALIZED_XI, xi=0.0), analytic=True)
    np.testing.assert_array_equal(xi0.state.law.mean, ddim.state.law.mean)
    np.testing.assert_array_equal(xi0.state.law.cov_diag, ddim.state.law.cov_diag)


def test_xi_zero_ensemble_is_the_ddim_ensemble():
    s = build_schedule(64)
    target = low_rank_gaussian(4, 2)
    runs = [
        sample(target, s, plan(s, name, **params), analytic=False, n=2000, streams=RngPolicy(5).family('xi'))
        for name, params in [(FamilyKind.DDIM_ORIGINAL, {}), (FamilyKind.GENERALIZED_XI, {'xi': 0.0})]
    ]
    np.testing.assert_array_equal(runs[0].state.particles, runs[1].state.particles)


@pytest.mark.parametrize("name", [FamilyKind.DDIM_ORIGINAL, FamilyKind.DDPM_ORIGINAL])
def test_off_subspace_deviation_never_grows(name):
    s = build_schedule(256)
    run = sample(low_rank_gaussian(4, 1), s, plan(s, name), analytic=True, record=True)
    deviations = [
        float(np.max(np.abs(state.law.cov_diag[1:] - s.one_minus_alpha_bar_at(t)))) for t, state in run.trajectory
    ]
    for earlier, later in zip(deviations, deviations[1:]):
        assert later <= earlier + 1e-15


def test_ensemble_init_needs_streams():
    with pytest.raises(ValidationError) as excinfo:
        init_state(2, n=10)
    assert excinfo.value.code == 'missing_streams'
