"""
Exact score oracles through Tweedie's formula:

    mu_{0|t}(x)  = E[X_0 | X_t = x]
    s_t(x)       = (sqrt(abar) mu_{0|t}(x) - x) / (1 - abar)
    ds_t/dx      = abar / (1 - abar)^2 Cov_{0|t}(x) - I / (1 - abar)

plus additive perturbations with analytically known error levels.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models
from scipy.special import softmax

from .schedule import NoiseSchedule
from .targets import TargetSpec, sample_xt

logger = logging.getLogger(__name__)


class PerturbationKind(models.TextChoices):
    CONSTANT_SHIFT = 'constant_shift', 'Constant shift m_t u'
    LINEAR_FIELD = 'linear_field', 'Diagonal linear field L_t x'


@dataclass(frozen=True)
class PerturbationSpec:
    """
    Additive score error delta_t(x).

    constant_shift: delta_t(x) = magnitude[t] * direction.
    linear_field:   delta_t(x) = diag_entries[t] * x (elementwise).
    Both keep the Hessian error identically zero.
    """
    kind: PerturbationKind
    epsilon_score: float
    direction: Optional[np.ndarray] = None
    magnitude: Optional[np.ndarray] = None
    diag_entries: Optional[np.ndarray] = None

    def delta(self, t: int, x: np.ndarray) -> np.ndarray:
        if self.kind == PerturbationKind.CONSTANT_SHIFT:
            return np.broadcast_to(self.magnitude[t - 1] * self.direction, np.shape(x))
        return self.diag_entries[t - 1] * x

    def jacobian_delta(self, t: int, d: int) -> np.ndarray:
        if self.kind == PerturbationKind.CONSTANT_SHIFT:
            return np.zeros(d)
        return np.broadcast_to(self.diag_entries[t - 1], (d,)).astype(np.float64)

    def offset(self, t: int, d: int) -> np.ndarray:
        if self.kind == PerturbationKind.CONSTANT_SHIFT:
            return self.magnitude[t - 1] * self.direction
        return np.zeros(d)


def constant_shift(schedule: NoiseSchedule, direction, epsilon: float) -> PerturbationSpec:
    """Shift of constant size epsilon along ``direction`` at every step."""
    u = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValidationError("perturbation direction must be nonzero", code="invalid_perturbation")
    return PerturbationSpec(
        kind=PerturbationKind.CONSTANT_SHIFT,
        epsilon_score=float(epsilon),
        direction=u / norm,
        magnitude=np.full(schedule.T, float(epsilon)),
    )


def linear_field(target: TargetSpec, schedule: NoiseSchedule, epsilon: float) -> PerturbationSpec:
    """
    Uniform diagonal field c x with c chosen so that
    (1/T) sum_t E||c X_t||^2 = epsilon^2 under the forward marginals.
    """
    mean_sq = float(np.mean(_forward_second_moments(target, schedule).sum(axis=1)))
    c = float(epsilon) / math.sqrt(mean_sq)
    return PerturbationSpec(
        kind=PerturbationKind.LINEAR_FIELD,
        epsilon_score=float(epsilon),
        diag_entries=np.full((schedule.T, target.d), c),
    )


def _forward_second_moments(target: TargetSpec, schedule: NoiseSchedule) -> np.ndarray:
    """T x d matrix of E[X_{t,i}^2]."""
    if target.is_gaussian:
        m0 = target.covariance_diag()
    else:
        m0 = np.sum(target.weights[:, None] * target.atoms ** 2, axis=0)
    abar = schedule.alpha_bar[:, None]
    return abar * m0[None, :] + schedule.one_minus_alpha_bar[:, None]


def _noise_variance(abar: float, one_minus: Optional[float]) -> float:
    """1 - abar, taken from the schedule when the caller has it."""
    return 1.0 - abar if one_minus is None else one_minus


def posterior_mean_at(
    target: TargetSpec, abar: float, x: np.ndarray, one_minus: Optional[float] = None
) -> np.ndarray:
    """E[X_0 | X_t = x] at noise level abar in [0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    noise = _noise_variance(abar, one_minus)
    if target.is_gaussian:
        v = target.covariance_diag()
        return math.sqrt(abar) * v / (abar * v + noise) * x
    weights = _atom_posterior(target, abar, x, noise)
    return weights @ target.atoms


def posterior_cov_diag_at(
    target: TargetSpec, abar: float, x: np.ndarray, one_minus: Optional[float] = None
) -> np.ndarray:
    """Diagonal of Cov[X_0 | X_t = x]; x-independent for Gaussian targets."""
    x = np.asarray(x, dtype=np.float64)
    noise = _noise_variance(abar, one_minus)
    if target.is_gaussian:
        v = target.covariance_diag()
        return np.broadcast_to(noise * v / (abar * v + noise), x.shape).copy()
    weights = _atom_posterior(target, abar, x, noise)
    mean = weights @ target.atoms
    second = weights @ (target.atoms ** 2)
    return np.maximum(second - mean ** 2, 0.0)


def _atom_posterior(target: TargetSpec, abar: float, x: np.ndarray, noise: float) -> np.ndarray:
    """Posterior atom weights, softmax over log w_j - ||x - sqrt(abar) a_j||^2 / (2 noise)."""
    x2 = np.atleast_2d(x)
    sq = np.sum((x2[:, None, :] - math.sqrt(abar) * target.atoms[None, :, :]) ** 2, axis=2)
    logits = np.log(target.weights)[None, :] - sq / (2.0 * noise)
    weights = softmax(logits, axis=1)
    return weights[0] if x.ndim == 1 else weights


def score_at(
    target: TargetSpec, abar: float, x: np.ndarray, one_minus: Optional[float] = None
) -> np.ndarray:
    """Exact score of the forward marginal at noise level abar."""
    x = np.asarray(x, dtype=np.float64)
    noise = _noise_variance(abar, one_minus)
    if target.is_gaussian:
        return -x / (abar * target.covariance_diag() + noise)
    return (math.sqrt(abar) * posterior_mean_at(target, abar, x, noise) - x) / noise


def score_jacobian_diag_at(
    target: TargetSpec, abar: float, x: np.ndarray, one_minus: Optional[float] = None
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    noise = _noise_variance(abar, one_minus)
    if target.is_gaussian:
        jac = -1.0 / (abar * target.covariance_diag() + noise)
        return np.broadcast_to(jac, x.shape).copy()
    cov = posterior_cov_diag_at(target, abar, x, noise)
    return abar / noise ** 2 * cov - 1.0 / noise


@dataclass(frozen=True)
class ScoreOracle:
    """Exact (optionally perturbed) score evaluator for one target and schedule."""
    target: TargetSpec
    schedule: NoiseSchedule
    perturbation: Optional[PerturbationSpec] = None

    def __str__(self):
        suffix = f", perturbed by {self.perturbation.kind.value}" if self.perturbation else ""
        return f"ScoreOracle({self.target}{suffix})"

    def _abar(self, t: int) -> float:
        if not 1 <= t <= self.schedule.T:
            raise ValidationError("step %(t)s outside 1..T", code="invalid_step", params={'t': t})
        return self.schedule.alpha_bar_at(t)

    def _noise(self, t: int) -> float:
        return self.schedule.one_minus_alpha_bar_at(t)

    def posterior_mean(self, t: int, x: np.ndarray) -> np.ndarray:
        return posterior_mean_at(self.target, self._abar(t), x, self._noise(t))

    def posterior_cov_diag(self, t: int, x: np.ndarray) -> np.ndarray:
        return posterior_cov_diag_at(self.target, self._abar(t), x, self._noise(t))

    def exact_score(self, t: int, x: np.ndarray) -> np.ndarray:
        return score_at(self.target, self._abar(t), x, self._noise(t))

    def score(self, t: int, x: np.ndarray) -> np.ndarray:
        s = self.exact_score(t, x)
        if self.perturbation is not None:
            s = s + self.perturbation.delta(t, x)
        return s

    def score_jacobian_diag(self, t: int, x: np.ndarray) -> np.ndarray:
        jac = score_jacobian_diag_at(self.target, self._abar(t), x, self._noise(t))
        if self.perturbation is not None:
            jac = jac + self.perturbation.jacobian_delta(t, self.target.d)
        return jac

    @property
    def is_affine(self) -> bool:
        """Score affine in x, which is what analytic law propagation needs."""
        return self.target.is_gaussian

    def affine_map(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        """(J, b) with s_t(x) = J * x + b elementwise."""
        if not self.is_affine:
            raise ValidationError(
                "analytic propagation unavailable: score of %(target)s is not affine",
                code="analytic_unavailable",
                params={'target': str(self.target)},
            )
        d = self.target.d
        jac = score_jacobian_diag_at(self.target, self._abar(t), np.zeros(d), self._noise(t))
        offset = np.zeros(d)
        if self.perturbation is not None:
            jac = jac + self.perturbation.jacobian_delta(t, d)
            offset = offset + self.perturbation.offset(t, d)
        return jac, offset


def declared_epsilon_score(oracle: ScoreOracle) -> float:
    """Analytic sqrt((1/T) sum_t E||s_t - s_t*||^2)."""
    p = oracle.perturbation
    if p is None:
        return 0.0
    if p.kind == PerturbationKind.CONSTANT_SHIFT:
        return float(math.sqrt(np.mean(p.magnitude ** 2)))
    moments = _forward_second_moments(oracle.target, oracle.schedule)
    return float(math.sqrt(np.mean(np.sum(p.diag_entries ** 2 * moments, axis=1))))


def declared_epsilon_jacobi(oracle: ScoreOracle) -> float:
    """sqrt((1/T) sum_t ||J_t - J_t*||_F^2); zero for constant shifts."""
    p = oracle.perturbation
    if p is None or p.kind == PerturbationKind.CONSTANT_SHIFT:
        return 0.0
    return float(math.sqrt(np.mean(np.sum(p.diag_entries ** 2, axis=1))))


def audit_epsilon_score(oracle: ScoreOracle, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of (1/T) sum_t E||s_t(X_t) - s_t*(X_t)||^2."""
    if oracle.perturbation is None:
        return 0.0
    total = 0.0
    for t in range(1, oracle.schedule.T + 1):
        xt = sample_xt(oracle.target, oracle.schedule.alpha_bar_at(t), rng, n)
        diff = oracle.score(t, xt) - oracle.exact_score(t, xt)
        total += float(np.mean(np.sum(diff ** 2, axis=1)))
    return total / oracle.schedule.T


def jacobian_condition_report(oracle: ScoreOracle, eta: np.ndarray) -> Dict[int, bool]:
    """
    Per applied step t = 2..T: eta_t * min_i J_i >= -1/4 (Gaussian targets,
    where J is x-independent).
    """
    report = {}
    for t in range(2, oracle.schedule.T + 1):
        jac, _ = oracle.affine_map(t)
        report[t] = eta[t - 1] * float(np.min(jac)) >= -0.25
    return report
