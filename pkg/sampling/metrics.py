"""
Distances and bounds between the laws the samplers produce and the true
marginals: the Frobenius TV proxy and its sandwich, Monte-Carlo and quadrature
TV, closed-form KL, the one-step lower bound and posterior-trace curves.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.integrate import trapezoid
from scipy.stats import norm

from .schedule import NoiseSchedule
from .scores import posterior_cov_diag_at
from .streams import StreamFamily, block_slices, map_blocks, ordered_sum
from .targets import GaussianLaw, TargetSpec, sample_xt

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]

CONFIDENCE = 0.95
SANDWICH_LOWER = 1.0 / 100.0
SANDWICH_UPPER = 1.5
# off-subspace ratios below this are round-off of an exact relation
RELATION_ATOL = 1e-12


@dataclass(frozen=True)
class TvEstimate:
    estimate: float
    half_width: float
    n_samples: int

    def __post_init__(self):
        if not 0.0 <= self.estimate <= 1.0 or self.half_width < 0.0:
            raise ValidationError("TV estimate out of range", code="invalid_estimate")

    @property
    def interval(self) -> Tuple[float, float]:
        return self.estimate - self.half_width, self.estimate + self.half_width


@dataclass(frozen=True)
class ProxyReport:
    """D = ||Sigma1^-1 Sigma2 - I||_F with the TV sandwich it implies."""
    D: float
    tv_lower: float
    tv_upper: float


def _block_size() -> int:
    return settings.DIFFLAB_BLOCK_SIZE


def gaussian_frob_proxy(law1: GaussianLaw, law2: GaussianLaw) -> ProxyReport:
    """
    For zero-mean diagonal Gaussians,
    min{1, D}/100 <= TV(law1, law2) <= min{3/2 min{1, D}, 1}.
    """
    v1, v2 = np.asarray(law1.cov_diag), np.asarray(law2.cov_diag)
    if np.any(v1 <= 0.0):
        raise ValidationError(
            "proxy undefined: zero entry in the reference covariance", code="proxy_undefined"
        )
    D = float(np.sqrt(np.sum((v2 / v1 - 1.0) ** 2)))
    capped = min(1.0, D)
    return ProxyReport(D=D, tv_lower=SANDWICH_LOWER * capped, tv_upper=min(SANDWICH_UPPER * capped, 1.0))


def _estimate_from_sums(total: float, total_sq: float, n: int) -> TvEstimate:
    mean = total / n
    if n > 1:
        var = max((total_sq - n * mean * mean) / (n - 1), 0.0)
    else:
        var = 0.0
    z = float(norm.ppf(0.5 + CONFIDENCE / 2.0))
    return TvEstimate(
        estimate=min(max(mean, 0.0), 1.0),
        half_width=z * math.sqrt(var / n),
        n_samples=n,
    )


def _tv_terms(log_p: LogDensity, log_q: LogDensity, x: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        ratio = np.exp(log_q(x) - log_p(x))
    return np.clip(1.0 - ratio, 0.0, 1.0)


def tv_from_samples(log_p: LogDensity, log_q: LogDensity, samples: np.ndarray) -> TvEstimate:
    """TV = E_p[(1 - q/p)_+] estimated on given draws from p."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] < 1:
        raise ValidationError("no samples to estimate TV from", code="empty_ensemble")
    slices = block_slices(samples.shape[0], _block_size())
    terms = [_tv_terms(log_p, log_q, samples[s]) for s in slices]
    total = ordered_sum(float(np.sum(f)) for f in terms)
    total_sq = ordered_sum(float(np.sum(f * f)) for f in terms)
    return _estimate_from_sums(total, total_sq, samples.shape[0])


def tv_monte_carlo(
    log_p: LogDensity,
    log_q: LogDensity,
    sampler_p: Sampler,
    n: int,
    streams: StreamFamily,
    threads: int = 1,
) -> TvEstimate:
    """
    Monte-Carlo TV with a normal-approximation 95% interval. Draws come from
    ``sampler_p(generator, rows)`` block by block, one substream per block.
    """
    if n < 1:
        raise ValidationError("no samples to estimate TV from", code="empty_ensemble")
    slices = block_slices(n, _block_size())

    def block_sums(b: int) -> Tuple[float, float]:
        x = sampler_p(streams.generator(b), slices[b].stop - slices[b].start)
        f = _tv_terms(log_p, log_q, x)
        return float(np.sum(f)), float(np.sum(f * f))

    sums = map_blocks(block_sums, len(slices), threads)
    return _estimate_from_sums(
        ordered_sum(s for s, _ in sums), ordered_sum(sq for _, sq in sums), n
    )


def tv_quadrature_1d(
    log_p: LogDensity,
    log_q: LogDensity,
    lo: float,
    hi: float,
    tol: float = 1e-8,
    max_level: int = 22,
) -> float:
    """Trapezoid rule on |p - q| / 2 over [lo, hi], halving the step until two
    successive estimates differ by less than tol."""
    points = 257
    previous = None
    for level in range(max_level):
        x = np.linspace(lo, hi, points)
        f = 0.5 * np.abs(np.exp(log_p(x[:, None])) - np.exp(log_q(x[:, None])))
        current = float(trapezoid(f, x))
        if previous is not None and abs(current - previous) < tol:
            return min(current, 1.0)
        previous = current
        points = 2 * points - 1
    logger.warning(f"TV quadrature stopped at level {max_level} without reaching tol={tol}")
    return min(previous, 1.0)


def tv_gaussian_diag(
    law1: GaussianLaw,
    law2: GaussianLaw,
    n: Optional[int] = None,
    streams: Optional[StreamFamily] = None,
    threads: int = 1,
) -> TvEstimate:
    """TV between diagonal Gaussians: quadrature in 1D, Monte Carlo under law1 otherwise."""
    if law1.d == 1:
        spread = 12.0 * math.sqrt(max(float(law1.cov_diag[0]), float(law2.cov_diag[0])))
        centre = 0.5 * (float(law1.mean[0]) + float(law2.mean[0]))
        gap = abs(float(law1.mean[0]) - float(law2.mean[0]))
        value = tv_quadrature_1d(
            law1.log_pdf, law2.log_pdf, centre - gap - spread, centre + gap + spread
        )
        return TvEstimate(estimate=value, half_width=0.0, n_samples=0)
    return tv_monte_carlo(law1.log_pdf, law2.log_pdf, law1.sample, n, streams, threads)


def kl_diag_gaussian(law1: GaussianLaw, law2: GaussianLaw) -> float:
    """KL(law1 || law2) for diagonal Gaussians."""
    v1, v2 = np.asarray(law1.cov_diag), np.asarray(law2.cov_diag)
    if np.any(v2 <= 0.0):
        raise ValidationError("KL undefined: degenerate second law", code="density_undefined")
    if np.any(v1 <= 0.0):
        return math.inf
    shift = (np.asarray(law2.mean) - np.asarray(law1.mean)) ** 2
    return float(0.5 * np.sum(v1 / v2 + shift / v2 - 1.0 + np.log(v2 / v1)))


def _one_step_ratios(schedule: NoiseSchedule, t: int, eta: float, sigma: float) -> Tuple[float, float]:
    """
    Output-over-true variance ratios minus one, on and off the data subspace,
    of one reverse step started from the exact X_t of N(0, diag(I_k, 0)).
    """
    if not 1 <= t <= schedule.T:
        raise ValidationError("step %(t)s outside 1..T", code="invalid_step", params={'t': t})
    alpha, one_minus = schedule.alpha_at(t), schedule.one_minus_alpha_bar_at(t)
    gap = one_minus - schedule.beta_at(t)
    if t == 1 or gap <= 0.0:
        raise ValidationError(
            "degenerate step %(t)s: alpha_t equals alpha_bar_t", code="degenerate_step", params={'t': t}
        )
    off = one_minus / gap * (1.0 - eta / one_minus) ** 2 + sigma ** 2 / gap - 1.0
    if abs(off) < RELATION_ATOL:
        off = 0.0
    on = ((1.0 - eta) ** 2 + sigma ** 2) / alpha - 1.0
    return on, off


def one_step_lower_bound(schedule: NoiseSchedule, t: int, eta: float, sigma: float, d: int) -> float:
    """
    Lower bound on TV(Y_{t-1}, X_{t-1}) for one step from the exact X_t of a
    rank-k Gaussian with d >= 2k, valid for any (eta, sigma):

        (1/100) min{ sqrt(d/2) |(1 - abar)/(alpha - abar) (1 - eta/(1 - abar))^2
                                + sigma^2/(alpha - abar) - 1|, 1 }.

    Zero exactly when (eta, sigma) satisfy the coefficient relation.
    """
    _, off = _one_step_ratios(schedule, t, eta, sigma)
    return SANDWICH_LOWER * min(math.sqrt(d / 2.0) * abs(off), 1.0)


def gaussian_full_bound(
    schedule: NoiseSchedule, t: int, eta: float, sigma: float, d: int, k: int
) -> ProxyReport:
    """Sandwich from the exact one-step proxy, keeping the on-subspace term."""
    on, off = _one_step_ratios(schedule, t, eta, sigma)
    D = math.sqrt(k * on ** 2 + (d - k) * off ** 2)
    capped = min(1.0, D)
    return ProxyReport(D=D, tv_lower=SANDWICH_LOWER * capped, tv_upper=min(SANDWICH_UPPER * capped, 1.0))


def mean_shift_proxy(law: GaussianLaw, reference: GaussianLaw) -> float:
    """||Sigma_ref^(-1/2) (mu - mu_ref)||_2."""
    v = np.asarray(reference.cov_diag)
    if np.any(v <= 0.0):
        raise ValidationError("proxy undefined: zero reference variance", code="proxy_undefined")
    return float(np.sqrt(np.sum((np.asarray(law.mean) - np.asarray(reference.mean)) ** 2 / v)))


@dataclass(frozen=True)
class PosteriorTrace:
    """Per step t = 1..T: MC mean and standard error of tr Cov[X_0 | X_t]."""
    mean: np.ndarray
    stderr: np.ndarray

    def rows(self):
        return [
            {'t': t, 'trace': float(self.mean[t - 1]), 'stderr': float(self.stderr[t - 1])}
            for t in range(1, len(self.mean) + 1)
        ]


def posterior_trace_curve(
    target: TargetSpec,
    schedule: NoiseSchedule,
    n: int,
    streams: StreamFamily,
    threads: int = 1,
) -> PosteriorTrace:
    if n < 1:
        raise ValidationError("empty ensemble", code="empty_ensemble")
    slices = block_slices(n, _block_size())
    means = np.empty(schedule.T)
    stderrs = np.empty(schedule.T)
    for t in range(1, schedule.T + 1):
        abar, noise = schedule.alpha_bar_at(t), schedule.one_minus_alpha_bar_at(t)
        step = streams.child(f"t{t}")

        def block_sums(b: int) -> Tuple[float, float]:
            xt = sample_xt(target, abar, step.generator(b), slices[b].stop - slices[b].start)
            trace = np.sum(posterior_cov_diag_at(target, abar, xt, noise), axis=1)
            return float(np.sum(trace)), float(np.sum(trace * trace))

        sums = map_blocks(block_sums, len(slices), threads)
        total = ordered_sum(s for s, _ in sums)
        total_sq = ordered_sum(sq for _, sq in sums)
        mean = total / n
        var = max((total_sq - n * mean * mean) / (n - 1), 0.0) if n > 1 else 0.0
        means[t - 1] = mean
        stderrs[t - 1] = math.sqrt(var / n)
    logger.debug(f"Posterior trace for {target}: first={means[0]:.4g}, last={means[-1]:.4g}")
    return PosteriorTrace(mean=means, stderr=stderrs)


def histogram_tv(a: np.ndarray, b: np.ndarray, bins: int = 64) -> float:
    """
    Half the L1 distance between shared-bin histograms of two 1-D samples.
    A projection proxy for laws without a closed-form density; biased upward
    by sampling noise.
    """
    a, b = np.ravel(a), np.ravel(b)
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins=bins)
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    return float(0.5 * np.sum(np.abs(pa / a.size - pb / b.size)))
