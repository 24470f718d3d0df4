"""
Reverse process

    Y_{t-1} = (Y_t + eta_t s_t(Y_t) + sigma_t Z_t) / sqrt(alpha_t),   t = T, ..., 2,

run either on a particle ensemble or, for affine scores, as an exact map on
diagonal Gaussian laws. The loop stops at Y_1.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .coefficients import CoefficientPlan
from .schedule import NoiseSchedule
from .scores import ScoreOracle
from .streams import StreamFamily, block_slices, map_blocks
from .targets import GaussianLaw, TargetSpec, forward_marginal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleState:
    particles: np.ndarray

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def d(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class AnalyticState:
    law: GaussianLaw

    @property
    def d(self) -> int:
        return self.law.d


SamplerState = Union[EnsembleState, AnalyticState]


@dataclass(frozen=True)
class ReverseRun:
    """Everything a reverse run needs; ``state`` is the state at t = T."""
    schedule: NoiseSchedule
    plan: CoefficientPlan
    oracle: ScoreOracle
    state: SamplerState
    trajectory: Optional[List[Tuple[int, SamplerState]]] = field(default=None, repr=False)

    def __str__(self):
        return f"ReverseRun({self.plan.family}, T={self.schedule.T}, {self.oracle.target})"


def _block_size() -> int:
    return settings.DIFFLAB_BLOCK_SIZE


def init_state(
    d: int,
    n: Optional[int] = None,
    streams: Optional[StreamFamily] = None,
    analytic: bool = False,
    law: Optional[GaussianLaw] = None,
    threads: int = 1,
) -> SamplerState:
    """Y_T ~ N(0, I_d), as an exact law or as n particles drawn block by block."""
    if analytic:
        return AnalyticState(law=law if law is not None else GaussianLaw.standard(d))
    if n is None or n < 1:
        raise ValidationError("empty ensemble", code="empty_ensemble")
    if streams is None:
        raise ValidationError("ensemble initialisation needs random streams", code="missing_streams")
    init = streams.child('init')
    slices = block_slices(n, _block_size())
    blocks = map_blocks(lambda b: init.normals(b, (slices[b].stop - slices[b].start, d)), len(slices), threads)
    particles = np.concatenate(blocks, axis=0)
    if law is not None:
        particles = law.mean + np.sqrt(law.cov_diag) * particles
    return EnsembleState(particles=particles)


def reverse_step(
    state: SamplerState,
    t: int,
    plan: CoefficientPlan,
    oracle: ScoreOracle,
    streams: Optional[StreamFamily] = None,
    threads: int = 1,
) -> SamplerState:
    """One update from step t to t - 1 (2 <= t <= T)."""
    T = oracle.schedule.T
    if not 2 <= t <= T:
        raise ValidationError("reverse step %(t)s outside 2..T", code="invalid_step", params={'t': t})
    alpha = oracle.schedule.alpha_at(t)
    eta, sigma = plan.eta_at(t), plan.sigma_at(t)
    root = math.sqrt(alpha)

    if isinstance(state, AnalyticState):
        jac, offset = oracle.affine_map(t)
        gain = 1.0 + eta * jac
        law = state.law
        return AnalyticState(
            law=GaussianLaw(
                mean=(gain * law.mean + eta * offset) / root,
                cov_diag=(gain ** 2 * law.cov_diag + sigma ** 2) / alpha,
            )
        )

    noise = streams.child(f"step{t}") if sigma != 0.0 else None
    slices = block_slices(state.n, _block_size())

    def advance(b: int) -> np.ndarray:
        y = state.particles[slices[b]]
        out = y + eta * oracle.score(t, y)
        if noise is not None:
            out = out + sigma * noise.normals(b, y.shape)
        return out / root

    blocks = map_blocks(advance, len(slices), threads)
    return EnsembleState(particles=np.concatenate(blocks, axis=0))


def run_reverse(
    run: ReverseRun,
    streams: Optional[StreamFamily] = None,
    record: bool = False,
    threads: int = 1,
) -> ReverseRun:
    """Fold reverse_step from T down to 2; returns the run holding Y_1."""
    state = run.state
    trajectory = [(run.schedule.T, state)] if record else None
    for t in range(run.schedule.T, 1, -1):
        state = reverse_step(state, t, run.plan, run.oracle, streams, threads)
        if record:
            trajectory.append((t - 1, state))
    logger.debug(f"Finished {run} with {type(state).__name__}")
    return replace(run, state=state, trajectory=trajectory)


def one_step_from_truth(
    target: TargetSpec,
    schedule: NoiseSchedule,
    t: int,
    eta: float,
    sigma: float,
    n: int,
    streams: StreamFamily,
    threads: int = 1,
) -> Tuple[np.ndarray, GaussianLaw]:
    """
    Draw X_t from the forward marginal and apply
    Phi_t(x, z) = (x + eta s_t(x) + sigma z) / sqrt(alpha_t) once.

    Returns the n output particles and their exact Gaussian law.
    """
    if not target.is_gaussian:
        raise ValidationError(
            "one-step analysis needs a Gaussian target", code="analytic_unavailable"
        )
    if not 2 <= t <= schedule.T:
        raise ValidationError("step %(t)s outside 2..T", code="invalid_step", params={'t': t})
    oracle = ScoreOracle(target=target, schedule=schedule)
    incoming = forward_marginal(target, schedule.alpha_bar_at(t))
    alpha = schedule.alpha_at(t)
    jac, _ = oracle.affine_map(t)
    gain = 1.0 + eta * jac
    law = GaussianLaw.centered((gain ** 2 * incoming.cov_diag + sigma ** 2) / alpha)

    slices = block_slices(n, _block_size())
    xt_streams, z_streams = streams.child('xt'), streams.child('z')

    def draw(b: int) -> np.ndarray:
        rows = slices[b].stop - slices[b].start
        x = np.sqrt(incoming.cov_diag) * xt_streams.normals(b, (rows, target.d))
        out = x + eta * oracle.score(t, x)
        if sigma != 0.0:
            out = out + sigma * z_streams.normals(b, (rows, target.d))
        return out / math.sqrt(alpha)

    particles = np.concatenate(map_blocks(draw, len(slices), threads), axis=0)
    return particles, law
