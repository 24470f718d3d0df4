import math

import numpy as np
import pytest
from django.core.exceptions import ValidationError

from sampling.coefficients import (
    FamilyKind,
    ddpm_varsigma,
    eta_sigma_ratio_check,
    family_from_name,
    plan_for_family,
    relation_residual,
    relation_residuals,
    step_size_constraint_check,
    varsigma_to_plan,
    xi_plan,
    xi_segment_coefficients,
)
from sampling.schedule import build_schedule, schedule_from_alphas


@pytest.fixture
def step_at_09_05():
    """Two-step schedule whose step 2 has alpha_t = 0.9 and alpha_bar_t = 0.5."""
    return schedule_from_alphas([5.0 / 9.0, 0.9])


def plan(s, name, **params):
    return plan_for_family(s, family_from_name(name, **params))


def test_ddim_first_step_takes_the_limit():
    s = build_schedule(32)
    p = plan(s, FamilyKind.DDIM_ORIGINAL)
    assert p.eta_at(1) == s.beta_at(1)
    assert p.sigma_at(1) == 0.0


def test_ddim_at_known_step(step_at_09_05):
    p = plan(step_at_09_05, FamilyKind.DDIM_ORIGINAL)
    assert p.eta_at(2) == pytest.approx(0.1 / (1.0 + math.sqrt(0.8)), rel=1e-12)
    assert p.eta_at(2) == pytest.approx(0.0527864, abs=5e-8)
    assert p.is_deterministic


def test_ddpm_at_known_step(step_at_09_05):
    p = plan(step_at_09_05, FamilyKind.DDPM_ORIGINAL)
    assert p.eta_at(2) == pytest.approx(0.1, rel=1e-12)
    assert p.sigma_at(2) == pytest.approx(0.2828427, abs=5e-8)
    assert relation_residual(p, step_at_09_05, 2) == pytest.approx(0.0, abs=1e-14)


def test_relation_residual_of_the_zero_plan(step_at_09_05):
    p = plan(step_at_09_05, FamilyKind.CUSTOM, eta=[0.0, 0.0], sigma=[0.0, 0.0])
    assert relation_residual(p, step_at_09_05, 2) == pytest.approx(0.1, rel=1e-12)


@pytest.mark.parametrize("T", [16, 128, 1024])
@pytest.mark.parametrize(
    "name,params",
    [
        (FamilyKind.DDIM_ORIGINAL, {}),
        (FamilyKind.DDPM_ORIGINAL, {}),
        (FamilyKind.GENERALIZED_XI, {'xi': 0.0}),
        (FamilyKind.GENERALIZED_XI, {'xi': 0.25}),
        (FamilyKind.GENERALIZED_XI, {'xi': 1.0}),
        (FamilyKind.GENERALIZED_XI, {'xi': 2.0}),
    ],
)
def test_relation_holds_for_exact_families(T, name, params):
    s = build_schedule(T)
    p = plan(s, name, **params)
    assert p.family.satisfies_relation
    assert np.max(np.abs(relation_residuals(p, s))) < 1e-10


@pytest.mark.parametrize("T", [16, 128, 1024])
def test_relation_holds_for_ddpm_varsigma(T):
    s = build_schedule(T)
    p = varsigma_to_plan(s, ddpm_varsigma(s))
    assert np.max(np.abs(relation_residuals(p, s))) < 1e-10


def test_heuristic_families_are_not_marked_exact():
    s = build_schedule(64)
    for name in (FamilyKind.DDIM_HALF_BETA, FamilyKind.DDPM_BENTON, FamilyKind.DDPM_LI):
        p = plan(s, name)
        assert not p.family.satisfies_relation
        assert np.max(np.abs(relation_residuals(p, s))) > 1e-6


def test_xi_zero_reproduces_ddim():
    s = build_schedule(128)
    ddim = plan(s, FamilyKind.DDIM_ORIGINAL)
    xi0 = xi_plan(s, 0.0)
    np.testing.assert_array_equal(xi0.eta, ddim.eta)
    np.testing.assert_array_equal(xi0.sigma, ddim.sigma)


def test_xi_one_reproduces_ddpm():
    s = build_schedule(128)
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    xi1 = xi_plan(s, 1.0)
    np.testing.assert_allclose(xi1.eta, ddpm.eta, rtol=1e-12, atol=0)
    np.testing.assert_allclose(xi1.sigma, ddpm.sigma, rtol=1e-12, atol=1e-300)


def test_xi_segment_satisfies_relation():
    alpha_step, eta, sigma = xi_segment_coefficients(0.6, 0.8, 1.0)
    assert alpha_step == pytest.approx(0.5625, rel=1e-15)
    s = schedule_from_alphas([0.64, alpha_step])
    assert s.alpha_bar_at(2) == pytest.approx(0.36, rel=1e-14)
    p = plan(s, FamilyKind.CUSTOM, eta=[s.beta_at(1), eta], sigma=[0.0, sigma])
    assert abs(relation_residual(p, s, 2)) < 1e-12


def test_xi_segment_at_zero_is_deterministic():
    _, eta, sigma = xi_segment_coefficients(0.6, 0.8, 0.0)
    one_minus, alpha = 0.64, 0.5625
    assert sigma == 0.0
    assert eta == pytest.approx(one_minus - math.sqrt(one_minus * (alpha - 0.36)), rel=1e-12)


def test_xi_segment_at_zero_matches_the_ddim_step():
    alpha_step, eta, _ = xi_segment_coefficients(0.6, 0.8, 0.0)
    s = schedule_from_alphas([0.64, alpha_step])
    assert eta == pytest.approx(plan(s, FamilyKind.DDIM_ORIGINAL).eta_at(2), rel=1e-14)


@pytest.mark.parametrize("xi", np.linspace(0.1, 4.0, 14))
def test_xi_segment_is_continuous_in_xi(xi):
    h = 1e-7
    _, eta, sigma = xi_segment_coefficients(0.6, 0.8, xi)
    _, eta_h, sigma_h = xi_segment_coefficients(0.6, 0.8, xi + h)
    assert abs(eta_h - eta) < 1e-5
    assert abs(sigma_h - sigma) < 1e-5


def test_xi_segment_eta_is_continuous_at_zero():
    _, eta0, _ = xi_segment_coefficients(0.6, 0.8, 0.0)
    _, eta, _ = xi_segment_coefficients(0.6, 0.8, 1e-9)
    assert abs(eta - eta0) < 1e-8


@pytest.mark.parametrize("g0,g1", [(0.8, 0.6), (0.5, 0.5), (0.0, 0.5), (0.5, 1.0)])
def test_invalid_segments_are_rejected(g0, g1):
    with pytest.raises(ValidationError) as excinfo:
        xi_segment_coefficients(g0, g1, 1.0)
    assert excinfo.value.code == 'invalid_segment'


def test_negative_xi_is_inadmissible():
    with pytest.raises(ValidationError) as excinfo:
        xi_segment_coefficients(0.6, 0.8, -0.5)
    assert excinfo.value.code == 'family_inadmissible'
    with pytest.raises(ValidationError) as excinfo:
        xi_plan(build_schedule(16), -1.0)
    assert excinfo.value.code == 'family_inadmissible'


def test_per_step_xi_array():
    s = build_schedule(16)
    xis = np.where(np.arange(16) % 2 == 0, 0.0, 1.0)
    p = xi_plan(s, xis)
    ddim, ddpm = plan(s, FamilyKind.DDIM_ORIGINAL), plan(s, FamilyKind.DDPM_ORIGINAL)
    assert p.eta_at(3) == pytest.approx(ddim.eta_at(3), rel=1e-12)
    assert p.eta_at(4) == pytest.approx(ddpm.eta_at(4), rel=1e-12)
    assert isinstance(p.family.xi, tuple)


def test_zero_varsigma_is_ddim():
    s = build_schedule(64)
    p = varsigma_to_plan(s, np.zeros(64))
    np.testing.assert_allclose(p.eta, plan(s, FamilyKind.DDIM_ORIGINAL).eta, rtol=1e-10)
    assert p.is_deterministic


def test_ddpm_varsigma_is_ddpm():
    s = build_schedule(64)
    p = varsigma_to_plan(s, ddpm_varsigma(s))
    ddpm = plan(s, FamilyKind.DDPM_ORIGINAL)
    np.testing.assert_allclose(p.eta, ddpm.eta, rtol=1e-10)
    np.testing.assert_allclose(p.sigma, ddpm.sigma, rtol=1e-10, atol=1e-300)


def test_varsigma_above_admissibility_is_rejected():
    s = build_schedule(64)
    vs = np.zeros(64)
    vs[5] = 1.01 * math.sqrt((s.one_minus_alpha_bar_at(6) - s.beta_at(6)) / s.alpha_at(6))
    with pytest.raises(ValidationError) as excinfo:
        varsigma_to_plan(s, vs)
    assert excinfo.value.code == 'family_inadmissible'
    assert excinfo.value.params == {'t': 6}


def test_custom_plan_length_must_match():
    s = build_schedule(16)
    with pytest.raises(ValidationError) as excinfo:
        plan(s, FamilyKind.CUSTOM, eta=np.zeros(15), sigma=np.zeros(15))
    assert excinfo.value.code == 'family_inadmissible'


def test_unknown_family_name():
    with pytest.raises(ValidationError) as excinfo:
        family_from_name('ddim_fancy')
    assert excinfo.value.code == 'unknown_family'


def test_ddpm_step_size_check_flags_only_the_first_step():
    s = build_schedule(128)
    report = step_size_constraint_check(plan(s, FamilyKind.DDPM_ORIGINAL), s, C1=1.0)
    assert report[1] is False
    assert all(report[t] for t in range(2, 129))


def test_ddim_step_size_check_passes_after_the_first_step():
    s = build_schedule(128)
    report = step_size_constraint_check(plan(s, FamilyKind.DDIM_ORIGINAL), s, C1=1.0)
    assert all(report[t] for t in range(2, 129))


def test_zero_eta_passes_step_size_check():
    s = build_schedule(16)
    p = plan(s, FamilyKind.CUSTOM, eta=np.zeros(16), sigma=np.ones(16))
    assert all(step_size_constraint_check(p, s, C1=0.5).values())


def test_step_size_check_rejects_small_constant():
    s = build_schedule(16)
    with pytest.raises(ValidationError) as excinfo:
        step_size_constraint_check(plan(s, FamilyKind.DDPM_ORIGINAL), s, C1=0.4)
    assert excinfo.value.code == 'invalid_constant'


def test_eta_sigma_ratio_check():
    s = build_schedule(128)
    ddim = eta_sigma_ratio_check(plan(s, FamilyKind.DDIM_ORIGINAL), s, C2=4.0)
    assert not any(ddim.values())
    li = eta_sigma_ratio_check(plan(s, FamilyKind.DDPM_LI), s, C2=4.0)
    assert all(li.values())
