"""
Reverse-step coefficients (eta_t, sigma_t) for the DDIM, DDPM and
generalized families, and audits against the coefficient relation

    (1 - abar_t) (1 - eta_t / (1 - abar_t))^2 = alpha_t - abar_t - sigma_t^2.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models

from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


class FamilyKind(models.TextChoices):
    DDIM_ORIGINAL = 'ddim_original', 'DDIM (original)'
    DDIM_HALF_BETA = 'ddim_half_beta', 'DDIM, eta = (1 - alpha) / 2'
    DDIM_SONG_SCORE = 'ddim_song_score', 'DDIM, probability-flow variant'
    DDPM_ORIGINAL = 'ddpm_original', 'DDPM (original)'
    DDPM_BENTON = 'ddpm_benton', 'DDPM, eta = 2 (1 - sqrt(alpha))'
    DDPM_LI = 'ddpm_li', 'DDPM, sigma = sqrt(1 - alpha)'
    GENERALIZED_XI = 'generalized_xi', 'Generalized reverse SDE (xi)'
    VARSIGMA = 'varsigma', 'DDIM-form varsigma parametrisation'
    CUSTOM = 'custom', 'Custom eta / sigma arrays'


DDIM_KINDS = {FamilyKind.DDIM_ORIGINAL, FamilyKind.DDIM_HALF_BETA, FamilyKind.DDIM_SONG_SCORE}

# Families whose closed forms satisfy the coefficient relation exactly.
RELATION_KINDS = {
    FamilyKind.DDIM_ORIGINAL,
    FamilyKind.DDPM_ORIGINAL,
    FamilyKind.GENERALIZED_XI,
    FamilyKind.VARSIGMA,
}


@dataclass(frozen=True)
class CoefficientFamily:
    """Tagged family; only the fields of the chosen kind are consulted."""
    kind: FamilyKind
    xi: Union[float, Sequence[float], None] = None
    varsigma: Optional[Sequence[float]] = None
    eta: Optional[Sequence[float]] = None
    sigma: Optional[Sequence[float]] = None

    def __str__(self):
        if self.kind == FamilyKind.GENERALIZED_XI and np.isscalar(self.xi):
            return f"{self.kind.value}(xi={self.xi})"
        return str(self.kind.value)

    @property
    def satisfies_relation(self) -> bool:
        return self.kind in RELATION_KINDS


def family_from_name(name: str, **params) -> CoefficientFamily:
    try:
        kind = FamilyKind(name)
    except ValueError:
        raise ValidationError(
            "unknown coefficient family %(name)s", code="unknown_family", params={'name': name}
        )
    return CoefficientFamily(kind=kind, **params)


@dataclass(frozen=True)
class CoefficientPlan:
    family: CoefficientFamily
    eta: np.ndarray
    sigma: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.eta)

    def eta_at(self, t: int) -> float:
        return float(self.eta[t - 1])

    def sigma_at(self, t: int) -> float:
        return float(self.sigma[t - 1])

    @property
    def is_deterministic(self) -> bool:
        return not np.any(self.sigma)


def _ddim_original_eta(beta: np.ndarray, one_minus: np.ndarray) -> np.ndarray:
    # alpha_1 == alpha_bar_1, so the square root vanishes at t=1 without a 0/0
    ratio = np.clip((one_minus - beta) / one_minus, 0.0, None)
    return beta / (1.0 + np.sqrt(ratio))


def plan_for_family(s: NoiseSchedule, f: CoefficientFamily) -> CoefficientPlan:
    """Fill (eta_t, sigma_t) for every step of ``s`` from the family's closed form."""
    alpha, beta, one_minus = s.alpha, s.beta, s.one_minus_alpha_bar
    zeros = np.zeros(s.T)

    if f.kind == FamilyKind.DDIM_ORIGINAL:
        eta, sigma = _ddim_original_eta(beta, one_minus), zeros
    elif f.kind == FamilyKind.DDIM_HALF_BETA:
        eta, sigma = beta / 2.0, zeros
    elif f.kind == FamilyKind.DDIM_SONG_SCORE:
        root = np.sqrt(alpha)
        eta, sigma = (-1.0 + 4.0 * root - 3.0 * alpha) / (2.0 * root), zeros
    elif f.kind == FamilyKind.DDPM_ORIGINAL:
        eta = beta
        sigma = np.sqrt(np.clip(beta * (one_minus - beta) / one_minus, 0.0, None))
    elif f.kind == FamilyKind.DDPM_BENTON:
        eta, sigma = 2.0 * (1.0 - np.sqrt(alpha)), np.sqrt(beta)
    elif f.kind == FamilyKind.DDPM_LI:
        eta, sigma = beta, np.sqrt(beta)
    elif f.kind == FamilyKind.GENERALIZED_XI:
        return xi_plan(s, f.xi)
    elif f.kind == FamilyKind.VARSIGMA:
        if f.varsigma is None:
            raise ValidationError("varsigma family needs a varsigma array", code="family_inadmissible")
        return varsigma_to_plan(s, f.varsigma)
    elif f.kind == FamilyKind.CUSTOM:
        eta = np.asarray(f.eta, dtype=np.float64)
        sigma = np.asarray(f.sigma, dtype=np.float64)
        if eta.shape != (s.T,) or sigma.shape != (s.T,):
            raise ValidationError(
                "custom eta/sigma must have length T=%(T)s", code="family_inadmissible", params={'T': s.T}
            )
        if np.any(sigma < 0):
            raise ValidationError("custom sigma must be nonnegative", code="family_inadmissible")
    else:
        raise ValidationError("unknown coefficient family", code="unknown_family")

    return CoefficientPlan(family=f, eta=np.asarray(eta, dtype=np.float64), sigma=np.asarray(sigma, dtype=np.float64))


def relation_residual(plan: CoefficientPlan, s: NoiseSchedule, t: int) -> float:
    """Signed residual LHS - RHS of the coefficient relation at step t."""
    one_minus = s.one_minus_alpha_bar_at(t)
    eta, sigma = plan.eta_at(t), plan.sigma_at(t)
    lhs = one_minus * (1.0 - eta / one_minus) ** 2
    # alpha_t - alpha_bar_t = (1 - alpha_bar_t) - (1 - alpha_t)
    return lhs - ((one_minus - s.beta_at(t)) - sigma ** 2)


def relation_residuals(plan: CoefficientPlan, s: NoiseSchedule) -> np.ndarray:
    return np.array([relation_residual(plan, s, t) for t in range(1, s.T + 1)])


def step_size_constraint_check(plan: CoefficientPlan, s: NoiseSchedule, C1: float) -> Dict[int, bool]:
    """Per step: True when eta_t <= min{C1 (1 - alpha_t), (1 - abar_t) / 2}."""
    if C1 < 0.5:
        raise ValidationError("C1 must be at least 1/2", code="invalid_constant")
    report = {}
    for t in range(1, s.T + 1):
        cap = min(C1 * s.beta_at(t), 0.5 * s.one_minus_alpha_bar_at(t))
        report[t] = plan.eta_at(t) <= cap
    return report


def eta_sigma_ratio_check(plan: CoefficientPlan, s: NoiseSchedule, C2: float) -> Dict[int, bool]:
    """Per step: True when eta_t^2 <= C2 (1 - alpha_t) sigma_t^2."""
    return {
        t: plan.eta_at(t) ** 2 <= C2 * (1.0 - s.alpha_at(t)) * plan.sigma_at(t) ** 2
        for t in range(1, s.T + 1)
    }


def xi_segment_coefficients(gamma_n: float, gamma_np1: float, xi: float) -> Tuple[float, float, float]:
    """
    Exact solution of one exponential-integrator segment of the generalized
    reverse dynamics, written as a reverse step.

    With f(t_{n+1}) = g1^xi / (1 - g1^2)^((1+xi)/2) and the integrals
    A_n = g1^(xi+1)/(1-g1^2)^((1+xi)/2) - g0^(xi+1)/(1-g0^2)^((1+xi)/2),
    B_n = g1^(2xi)/(1-g1^2)^xi - g0^(2xi)/(1-g0^2)^xi,
    the step is alpha = (g0/g1)^2, eta = (1-g0^2) A_n / (g1 f), sigma = g0 sqrt(B_n) / (g1 f).
    Both are evaluated in the factored forms below (rho = g0/g1,
    q = (1-g1^2)/(1-g0^2)) to avoid overflowing f for small 1 - g1^2.

    Returns (alpha_step, eta, sigma).
    """
    if not (0.0 < gamma_n < 1.0 and 0.0 < gamma_np1 < 1.0) or gamma_n >= gamma_np1:
        raise ValidationError(
            "invalid segment (%(g0)s, %(g1)s)",
            code="invalid_segment",
            params={'g0': gamma_n, 'g1': gamma_np1},
        )
    if xi < 0:
        raise ValidationError("xi must be nonnegative", code="family_inadmissible")

    log_alpha = 2.0 * math.log(gamma_n / gamma_np1)
    if xi == 0.0:
        eta = float(_ddim_original_eta(-math.expm1(log_alpha), 1.0 - gamma_n ** 2))
        return (gamma_n / gamma_np1) ** 2, eta, 0.0
    eta, sigma = _xi_step(log_alpha, 1.0 - gamma_n ** 2, 1.0 - gamma_np1 ** 2, xi)
    return (gamma_n / gamma_np1) ** 2, eta, sigma


def _xi_step(log_alpha: float, one_minus: float, one_minus_prev: float, xi: float) -> Tuple[float, float]:
    """
    (eta, sigma) of one segment from ln alpha_t, 1 - alpha_bar_t and
    1 - alpha_bar_{t-1}. With rho = sqrt(alpha_t) and
    q = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t):

        eta     = (1 - alpha_bar_t) (1 - rho^(xi+1) q^((xi+1)/2)),
        sigma^2 = alpha_t (1 - alpha_bar_{t-1}) (1 - rho^(2 xi) q^xi).
    """
    log_q = math.log(one_minus_prev / one_minus)
    eta = one_minus * -math.expm1(0.5 * (xi + 1.0) * (log_alpha + log_q))
    b_scaled = one_minus_prev * -math.expm1(xi * (log_alpha + log_q))
    sigma = math.exp(0.5 * log_alpha) * math.sqrt(max(b_scaled, 0.0))
    return eta, sigma


def xi_plan(s: NoiseSchedule, xi: Union[float, Sequence[float]]) -> CoefficientPlan:
    """
    Map xi_segment_coefficients over the schedule with gamma_n = sqrt(abar_t),
    gamma_{n+1} = sqrt(abar_{t-1}). Step t=1 has gamma_{n+1} = 1 and takes
    its limit (eta = 1 - alpha_1, sigma = 0).
    """
    xis = np.broadcast_to(np.asarray(xi, dtype=np.float64), (s.T,))
    if np.any(xis < 0):
        bad = int(np.flatnonzero(xis < 0)[0]) + 1
        raise ValidationError(
            "family inadmissible at step %(t)s: xi < 0", code="family_inadmissible", params={'t': bad}
        )
    eta = np.empty(s.T)
    sigma = np.empty(s.T)
    eta[0], sigma[0] = s.beta_at(1), 0.0
    for t in range(2, s.T + 1):
        eta[t - 1], sigma[t - 1] = _xi_step(
            math.log1p(-s.beta_at(t)),
            s.one_minus_alpha_bar_at(t),
            s.one_minus_alpha_bar_at(t - 1),
            float(xis[t - 1]),
        )
    # xi = 0 is the original DDIM pair
    flat = xis == 0.0
    eta[flat] = _ddim_original_eta(s.beta, s.one_minus_alpha_bar)[flat]
    sigma[flat] = 0.0
    family_xi = float(xis[0]) if np.all(xis == xis[0]) else tuple(xis)
    return CoefficientPlan(
        family=CoefficientFamily(kind=FamilyKind.GENERALIZED_XI, xi=family_xi), eta=eta, sigma=sigma
    )


def varsigma_to_plan(s: NoiseSchedule, varsigma: Sequence[float]) -> CoefficientPlan:
    """
    eta_t = (1 - abar_t) - sqrt((1 - abar_t)(alpha_t - abar_t - alpha_t varsigma_t^2)),
    sigma_t = sqrt(alpha_t) varsigma_t.
    """
    vs = np.asarray(varsigma, dtype=np.float64)
    if vs.shape != (s.T,):
        raise ValidationError(
            "varsigma must have length T=%(T)s", code="family_inadmissible", params={'T': s.T}
        )
    if np.any(vs < 0):
        raise ValidationError("varsigma must be nonnegative", code="family_inadmissible")
    alpha, one_minus = s.alpha, s.one_minus_alpha_bar
    radicand = (one_minus - s.beta) - alpha * vs ** 2
    bad = np.flatnonzero(radicand < 0)
    if bad.size:
        raise ValidationError(
            "varsigma inadmissible at step %(t)s",
            code="family_inadmissible",
            params={'t': int(bad[0]) + 1},
        )
    eta = one_minus - np.sqrt(one_minus * radicand)
    sigma = np.sqrt(alpha) * vs
    return CoefficientPlan(
        family=CoefficientFamily(kind=FamilyKind.VARSIGMA, varsigma=tuple(vs)), eta=eta, sigma=sigma
    )


def ddpm_varsigma(s: NoiseSchedule) -> np.ndarray:
    """varsigma_t^2 = (1 - alpha_t)(1 - abar_{t-1}) / (1 - abar_t): recovers the original DDPM pair."""
    one_minus_prev = np.concatenate(([0.0], s.one_minus_alpha_bar[:-1]))
    return np.sqrt(s.beta * one_minus_prev / s.one_minus_alpha_bar)
