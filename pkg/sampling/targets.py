"""
Analytically tractable target distributions and their forward marginals

    X_t = sqrt(abar) X_0 + sqrt(1 - abar) W,   W ~ N(0, I).

Gaussian targets are zero-mean with diagonal covariance, so every law the
samplers produce from them stays in the diagonal-Gaussian family.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class TargetKind(models.TextChoices):
    LOW_RANK_GAUSSIAN = 'low_rank_gaussian', 'N(0, diag(I_k, 0))'
    DIAG_GAUSSIAN = 'diag_gaussian', 'N(0, diag(v))'
    ATOM_MIXTURE = 'atom_mixture', 'Weighted point masses'


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian law with diagonal covariance."""
    mean: np.ndarray
    cov_diag: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.cov_diag) < 0):
            raise ValidationError("covariance entries must be nonnegative", code="invalid_law")

    @classmethod
    def standard(cls, d: int) -> 'GaussianLaw':
        return cls(mean=np.zeros(d), cov_diag=np.ones(d))

    @classmethod
    def centered(cls, cov_diag) -> 'GaussianLaw':
        cov_diag = np.asarray(cov_diag, dtype=np.float64)
        return cls(mean=np.zeros_like(cov_diag), cov_diag=cov_diag)

    @property
    def d(self) -> int:
        return len(self.cov_diag)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if np.any(self.cov_diag <= 0):
            raise ValidationError("density undefined for a degenerate law", code="density_undefined")
        z = (x - self.mean) ** 2 / self.cov_diag
        return -0.5 * (np.sum(z, axis=1) + np.sum(np.log(self.cov_diag)) + self.d * LOG_2PI)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + np.sqrt(self.cov_diag) * rng.standard_normal((n, self.d))


@dataclass(frozen=True)
class MixtureLaw:
    """Isotropic Gaussian mixture sharing one variance: the noised atom mixture."""
    means: np.ndarray
    variance: float
    log_weights: np.ndarray

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """n x m matrix of log N(x_i; mean_j, variance I)."""
        x = np.atleast_2d(x)
        if self.variance <= 0:
            raise ValidationError("density undefined for a point-mass mixture", code="density_undefined")
        sq = np.sum((x[:, None, :] - self.means[None, :, :]) ** 2, axis=2)
        return -0.5 * (sq / self.variance + self.d * (LOG_2PI + math.log(self.variance)))

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_pdf(x) + self.log_weights, axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.log_weights), size=n, p=np.exp(self.log_weights))
        return self.means[idx] + math.sqrt(self.variance) * rng.standard_normal((n, self.d))


MarginalLaw = Union[GaussianLaw, MixtureLaw]


@dataclass(frozen=True)
class TargetSpec:
    """
    Target law with intrinsic-dimension metadata.

    ``k_intrinsic`` is k for LowRankGaussian, the number of nonzero variances
    for DiagGaussian and user-declared for AtomMixture. ``support_radius`` is
    infinite for Gaussian targets.
    """
    kind: TargetKind
    d: int
    k: Optional[int] = None
    variances: Optional[np.ndarray] = field(default=None, repr=False)
    atoms: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)
    declared_k: Optional[int] = None
    declared_radius: Optional[float] = None
    # scale exponent of the covering-number definition; recorded, unused
    c_eps0: Optional[float] = None

    def __str__(self):
        return f"{self.kind.value}(d={self.d}, k={self.k_intrinsic})"

    @property
    def is_gaussian(self) -> bool:
        return self.kind != TargetKind.ATOM_MIXTURE

    @property
    def k_intrinsic(self) -> int:
        if self.kind == TargetKind.LOW_RANK_GAUSSIAN:
            return self.k
        if self.kind == TargetKind.DIAG_GAUSSIAN:
            return int(np.count_nonzero(self.variances))
        return self.declared_k

    @property
    def support_radius(self) -> float:
        if self.kind != TargetKind.ATOM_MIXTURE:
            return math.inf
        if self.declared_radius is not None:
            return self.declared_radius
        return float(np.max(np.linalg.norm(self.atoms, axis=1)))

    def covariance_diag(self) -> np.ndarray:
        """Data covariance diagonal V (Gaussian targets only)."""
        if self.kind == TargetKind.LOW_RANK_GAUSSIAN:
            v = np.zeros(self.d)
            v[: self.k] = 1.0
            return v
        if self.kind == TargetKind.DIAG_GAUSSIAN:
            return np.asarray(self.variances, dtype=np.float64)
        raise ValidationError("atom mixtures have no diagonal Gaussian covariance", code="not_gaussian")

    def second_moment(self) -> float:
        """E ||X_0||^2."""
        if self.is_gaussian:
            return float(np.sum(self.covariance_diag()))
        return float(np.sum(self.weights * np.sum(self.atoms ** 2, axis=1)))


def low_rank_gaussian(d: int, k: int) -> TargetSpec:
    if not 1 <= k <= d:
        raise ValidationError("LowRankGaussian needs 1 <= k <= d", code="invalid_target")
    return TargetSpec(kind=TargetKind.LOW_RANK_GAUSSIAN, d=d, k=k)


def diag_gaussian(variances: Sequence[float]) -> TargetSpec:
    v = np.asarray(variances, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or np.any(v < 0):
        raise ValidationError("variances must be a nonempty nonnegative vector", code="invalid_target")
    return TargetSpec(kind=TargetKind.DIAG_GAUSSIAN, d=v.size, variances=v)


def atom_mixture(
    atoms, weights=None, declared_k: Optional[int] = None, radius: Optional[float] = None,
) -> TargetSpec:
    atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
    m, d = atoms.shape
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError("weights must be a probability vector over the atoms", code="invalid_target")
    norms = np.linalg.norm(atoms, axis=1)
    if radius is not None and np.any(norms > radius):
        raise ValidationError(
            "atom norm %(norm)s exceeds the support radius %(R)s",
            code="invalid_target",
            params={'norm': float(norms.max()), 'R': radius},
        )
    return TargetSpec(
        kind=TargetKind.ATOM_MIXTURE, d=d, atoms=atoms, weights=w,
        declared_k=d if declared_k is None else declared_k, declared_radius=radius,
    )


def load_atoms_csv(path) -> np.ndarray:
    """One atom per row, comma separated."""
    return np.loadtxt(path, delimiter=',', ndmin=2, dtype=np.float64)


def _check_abar(abar: float):
    if not 0.0 < abar <= 1.0:
        raise ValidationError("invalid noise level %(abar)s", code="invalid_noise_level", params={'abar': abar})


def forward_marginal(target: TargetSpec, abar: float) -> MarginalLaw:
    """Law of X_t when alpha_bar_t = abar."""
    _check_abar(abar)
    if target.is_gaussian:
        return GaussianLaw.centered(abar * target.covariance_diag() + (1.0 - abar))
    return MixtureLaw(
        means=math.sqrt(abar) * target.atoms,
        variance=1.0 - abar,
        log_weights=np.log(target.weights),
    )


def log_density_t(target: TargetSpec, abar: float, x: np.ndarray) -> Union[float, np.ndarray]:
    """Exact log-density of the forward marginal; scalar for a single point."""
    values = forward_marginal(target, abar).log_pdf(x)
    return float(values[0]) if np.ndim(x) == 1 else values


def sample_x0(target: TargetSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. draws from the data law."""
    if target.kind == TargetKind.LOW_RANK_GAUSSIAN:
        x = np.zeros((n, target.d))
        x[:, : target.k] = rng.standard_normal((n, target.k))
        return x
    if target.kind == TargetKind.DIAG_GAUSSIAN:
        return np.sqrt(target.covariance_diag()) * rng.standard_normal((n, target.d))
    idx = rng.choice(len(target.weights), size=n, p=target.weights)
    return target.atoms[idx].copy()


def sample_xt(target: TargetSpec, abar: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draws of X_t by noising draws of X_0."""
    _check_abar(abar)
    x0 = sample_x0(target, rng, n)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * rng.standard_normal(x0.shape)
