"""
Compositions of the numerical core used by the experiment drivers: start a
sampler, run it, and compare where it ends up with the true law of X_1.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import models

from .coefficients import CoefficientPlan
from .metrics import ProxyReport, gaussian_frob_proxy, histogram_tv, mean_shift_proxy
from .samplers import AnalyticState, ReverseRun, init_state, run_reverse
from .schedule import NoiseSchedule
from .scores import PerturbationSpec, ScoreOracle
from .streams import StreamFamily, block_slices, map_blocks
from .targets import GaussianLaw, TargetSpec, forward_marginal, sample_xt

logger = logging.getLogger(__name__)


class InitKind(models.TextChoices):
    STANDARD = 'standard', 'Y_T ~ N(0, I)'
    EXACT = 'exact', 'Y_T distributed as X_T'


def true_law(target: TargetSpec, schedule: NoiseSchedule, t: int):
    return forward_marginal(target, schedule.alpha_bar_at(t))


def initial_law(target: TargetSpec, schedule: NoiseSchedule, init: str = InitKind.STANDARD) -> GaussianLaw:
    if init == InitKind.STANDARD:
        return GaussianLaw.standard(target.d)
    if not target.is_gaussian:
        raise ValidationError(
            "exact initialisation needs a Gaussian target", code="analytic_unavailable"
        )
    return true_law(target, schedule, schedule.T)


def start_run(
    target: TargetSpec,
    schedule: NoiseSchedule,
    plan: CoefficientPlan,
    perturbation: Optional[PerturbationSpec] = None,
    analytic: bool = True,
    init: str = InitKind.STANDARD,
    n: Optional[int] = None,
    streams: Optional[StreamFamily] = None,
    threads: int = 1,
) -> ReverseRun:
    oracle = ScoreOracle(target=target, schedule=schedule, perturbation=perturbation)
    if analytic and not oracle.is_affine:
        raise ValidationError(
            "analytic propagation unavailable for %(target)s", code="analytic_unavailable",
            params={'target': str(target)},
        )
    law = initial_law(target, schedule, init)
    state = init_state(target.d, n=n, streams=streams, analytic=analytic, law=law, threads=threads)
    return ReverseRun(schedule=schedule, plan=plan, oracle=oracle, state=state)


def sample(
    target: TargetSpec,
    schedule: NoiseSchedule,
    plan: CoefficientPlan,
    perturbation: Optional[PerturbationSpec] = None,
    analytic: bool = True,
    init: str = InitKind.STANDARD,
    n: Optional[int] = None,
    streams: Optional[StreamFamily] = None,
    threads: int = 1,
    record: bool = False,
) -> ReverseRun:
    """Run the reverse process from T down to 1."""
    run = start_run(target, schedule, plan, perturbation, analytic, init, n, streams, threads)
    return run_reverse(run, streams=streams, record=record, threads=threads)


def final_proxy(run: ReverseRun) -> ProxyReport:
    """Frobenius proxy of (law of X_1, law of Y_1) for analytic runs."""
    if not isinstance(run.state, AnalyticState):
        raise ValidationError("proxy needs an analytic run", code="rate_sweep_requires_analytic")
    return gaussian_frob_proxy(true_law(run.oracle.target, run.schedule, 1), run.state.law)


def final_mean_shift(run: ReverseRun) -> float:
    if not isinstance(run.state, AnalyticState):
        raise ValidationError("mean shift needs an analytic run", code="rate_sweep_requires_analytic")
    return mean_shift_proxy(run.state.law, true_law(run.oracle.target, run.schedule, 1))


@dataclass(frozen=True)
class CoordinateSummary:
    coordinate: int
    mean: float
    variance: float
    true_mean: float
    true_variance: float
    hist_tv: Optional[float]


def summarize(run: ReverseRun, streams: Optional[StreamFamily] = None, threads: int = 1):
    """
    Per-coordinate moments of Y_1 next to those of X_1. Ensemble runs also get
    a histogram TV proxy per coordinate against fresh draws of X_1.
    """
    target, schedule = run.oracle.target, run.schedule
    abar = schedule.alpha_bar_at(1)
    if target.is_gaussian:
        truth = true_law(target, schedule, 1)
        true_mean, true_var = truth.mean, truth.cov_diag
    else:
        means = np.sqrt(abar) * target.atoms
        true_mean = target.weights @ means
        true_var = target.weights @ (means ** 2) - true_mean ** 2 + (1.0 - abar)

    if isinstance(run.state, AnalyticState):
        mean, var, hist = run.state.law.mean, run.state.law.cov_diag, None
    else:
        particles = run.state.particles
        mean, var = particles.mean(axis=0), particles.var(axis=0, ddof=1 if run.state.n > 1 else 0)
        reference = streams.child('reference')
        slices = block_slices(run.state.n, settings.DIFFLAB_BLOCK_SIZE)
        blocks = map_blocks(
            lambda b: sample_xt(target, abar, reference.generator(b), slices[b].stop - slices[b].start),
            len(slices),
            threads,
        )
        truth_draws = np.concatenate(blocks, axis=0)
        hist = [histogram_tv(particles[:, i], truth_draws[:, i]) for i in range(target.d)]

    return [
        CoordinateSummary(
            coordinate=i + 1,
            mean=float(mean[i]),
            variance=float(var[i]),
            true_mean=float(true_mean[i]),
            true_variance=float(true_var[i]),
            hist_tv=None if hist is None else float(hist[i]),
        )
        for i in range(target.d)
    ]
