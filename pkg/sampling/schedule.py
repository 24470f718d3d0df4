"""
Discrete noise schedule: per-step beta_t, alpha_t and cumulative alpha_bar_t.

Steps are indexed 1..T; arrays are stored 0-based, so ``beta[t - 1]`` is the
beta of step t. Use the ``*_at`` accessors to avoid off-by-one slips.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise schedule for a horizon T built from constants (c0, c1)."""
    T: int
    c0: float
    c1: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    # 1 - alpha_bar_t without the cancellation of forming it from alpha_bar
    one_minus_alpha_bar: np.ndarray

    def __str__(self):
        return f"NoiseSchedule(T={self.T}, c0={self.c0}, c1={self.c1})"

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t; t = 0 returns 1 (the data law)."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def one_minus_alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 0.0
        return float(self.one_minus_alpha_bar[t - 1])

    def continuous_beta(self, tau: float) -> float:
        """
        Piecewise-constant forward-SDE rate beta(tau) on [t-1, t) such that
        alpha_t = exp(-2 * integral of beta over the step).
        """
        if tau < 0 or tau > self.T:
            raise ValidationError("time outside [0, T]", code="invalid_time")
        t = min(int(math.floor(tau)) + 1, self.T)
        return -0.5 * math.log(self.alpha_at(t))

    def continuous_alpha_bar(self, tau: float) -> float:
        """alpha_bar(tau) = exp(-2 * integral_0^tau beta(s) ds)."""
        if tau < 0 or tau > self.T:
            raise ValidationError("time outside [0, T]", code="invalid_time")
        whole = int(math.floor(tau))
        log_abar = float(np.sum(np.log(self.alpha[:whole])))
        if whole < self.T:
            log_abar -= 2.0 * (tau - whole) * self.continuous_beta(tau)
        return math.exp(log_abar)

    def to_rows(self) -> List[Dict[str, float]]:
        return [
            {
                't': t,
                'beta': self.beta_at(t),
                'alpha': self.alpha_at(t),
                'alpha_bar': self.alpha_bar_at(t),
            }
            for t in range(1, self.T + 1)
        ]


def build_schedule(T: int, c0: float = None, c1: float = None) -> NoiseSchedule:
    """
    beta_1 = T^(-c0);
    beta_{t+1} = (c1 ln T / T) * min{beta_1 (1 + c1 ln T / T)^t, 1}.

    alpha_bar is accumulated in log space so that it does not underflow for
    large T.
    """
    c0 = settings.DIFFLAB_C0 if c0 is None else float(c0)
    c1 = settings.DIFFLAB_C1 if c1 is None else float(c1)
    if T < 2:
        raise ValidationError("schedule needs T >= 2", code="schedule_out_of_range")
    if c0 <= 0 or c1 <= 0:
        raise ValidationError("c0 and c1 must be positive", code="schedule_out_of_range")

    rate = c1 * math.log(T) / T
    beta = np.empty(T, dtype=np.float64)
    beta[0] = T ** (-c0)
    steps = np.arange(1, T, dtype=np.float64)
    beta[1:] = rate * np.minimum(beta[0] * (1.0 + rate) ** steps, 1.0)

    bad = np.flatnonzero((beta <= 0.0) | (beta >= 1.0))
    if bad.size:
        t = int(bad[0]) + 1
        raise ValidationError(
            "schedule out of range: beta[%(t)s] = %(beta)s",
            code="schedule_out_of_range",
            params={'t': t, 'beta': float(beta[bad[0]])},
        )

    alpha = 1.0 - beta
    alpha_bar, one_minus = _cumulative(alpha, beta, np.log1p(-beta))
    logger.debug(f"Built schedule T={T} c0={c0} c1={c1}, alpha_bar_T={alpha_bar[-1]:.3e}")
    return NoiseSchedule(
        T=T, c0=c0, c1=c1, beta=beta, alpha=alpha, alpha_bar=alpha_bar, one_minus_alpha_bar=one_minus,
    )


@dataclass(frozen=True)
class StepRatioReport:
    bound: float
    ratios: Dict[int, float]
    passed: Dict[int, bool]

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def validate_step_ratio(s: NoiseSchedule) -> StepRatioReport:
    """
    Report (1 - alpha_t) / (1 - alpha_bar_{t-1}) against 4 c1 ln T / T for
    2 <= t <= T. Never raises.
    """
    bound = 4.0 * s.c1 * math.log(s.T) / s.T
    ratios, passed = {}, {}
    for t in range(2, s.T + 1):
        ratio = s.beta_at(t) / s.one_minus_alpha_bar_at(t - 1)
        ratios[t] = ratio
        passed[t] = ratio <= bound
    return StepRatioReport(bound=bound, ratios=ratios, passed=passed)


def schedule_from_alphas(alpha) -> NoiseSchedule:
    """
    Schedule with explicitly given alpha_t (used for one-step analyses at a
    prescribed (alpha_t, alpha_bar_t)); c0 and c1 are undefined.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size < 2 or np.any((alpha <= 0.0) | (alpha >= 1.0)):
        raise ValidationError("alphas must be T >= 2 values in (0, 1)", code="schedule_out_of_range")
    beta = 1.0 - alpha
    alpha_bar, one_minus = _cumulative(alpha, beta, np.log1p(-beta))
    return NoiseSchedule(
        T=alpha.size, c0=math.nan, c1=math.nan, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
        one_minus_alpha_bar=one_minus,
    )


def _cumulative(alpha: np.ndarray, beta: np.ndarray, log_alpha: np.ndarray):
    """
    alpha_bar and 1 - alpha_bar from the running sum of ln alpha_t. Step 1 is
    set exactly (alpha_bar_1 = alpha_1) so alpha_1 - alpha_bar_1 == 0.
    """
    log_abar = np.cumsum(log_alpha)
    alpha_bar = np.exp(log_abar)
    one_minus = -np.expm1(log_abar)
    alpha_bar[0] = alpha[0]
    one_minus[0] = beta[0]
    return alpha_bar, one_minus
