"""Closed-form Gaussian inference for the linear model g = H f + noise.

Two independent routes to the same posterior are kept side by side: the
normal-equations solve (`posterior_linear_gaussian`) and joint-Gaussian
block elimination (`conditioning_oracle`). They are each other's oracle
in the test suite and must agree to 1e-10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import operators
from .errors import ConditioningError, DimensionMismatchError, ParameterError
from .operators import LinearOperator

_JITTERS = (0.0, 1e-12, 1e-10)


@dataclass
class GaussianPrior:
    """Isotropic Gaussian prior N(mean, variance*I).

    `extra_variance` is the variance of the additional prior pull used by
    the fused supervised posterior; +inf disables that term.
    """

    mean: np.ndarray
    variance: float
    extra_variance: float = math.inf

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.ndim != 1:
            raise ParameterError(f"prior mean must be a vector, got shape {self.mean.shape}")
        if not self.variance > 0:
            raise ParameterError(f"prior variance must be > 0, got {self.variance}")
        if not self.extra_variance > 0:
            raise ParameterError(
                f"extra prior variance must be > 0 or +inf, got {self.extra_variance}"
            )


@dataclass
class NoiseModel:
    """Isotropic observation noise N(0, variance*I)."""

    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"noise variance must be > 0, got {self.variance}")


@dataclass
class GaussianBelief:
    """Gaussian posterior with mean, covariance and the noise/prior ratio."""

    mean: np.ndarray
    covariance: np.ndarray
    lam: float = field(default=float("nan"))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.mean.shape[0]
        if self.covariance.shape != (n, n):
            raise DimensionMismatchError(
                f"covariance shape {self.covariance.shape} does not match mean length {n}"
            )
        scale = max(1.0, float(np.abs(self.covariance).max(initial=0.0)))
        asym = float(np.abs(self.covariance - self.covariance.T).max(initial=0.0))
        if asym > 1e-12 * scale:
            raise ParameterError(f"covariance is not symmetric (max asymmetry {asym:.3e})")
        _cholesky_spd(self.covariance, what="covariance", semidefinite=True)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_json_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "lambda": float(self.lam),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianBelief":
        return cls(
            mean=np.asarray(doc["mean"], dtype=float),
            covariance=np.asarray(doc["covariance"], dtype=float),
            lam=float(doc["lambda"]),
        )


def _cholesky_spd(mat, what="matrix", semidefinite=False):
    """Cholesky with jitter escalation 0, 1e-12, 1e-10 before failing."""
    mat = np.asarray(mat, dtype=float)
    eye = np.eye(mat.shape[0])
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(mat + jitter * eye if jitter else mat)
        except np.linalg.LinAlgError:
            continue
    if semidefinite and mat.shape[0] and float(np.abs(mat).max()) == 0.0:
        # the all-zero matrix is a valid degenerate covariance
        return np.zeros_like(mat)
    pivot = float(np.linalg.eigvalsh(mat).min())
    raise ConditioningError(f"{what} is not positive definite (smallest pivot {pivot:.6e})")


def _solve_spd(factor, rhs):
    return scipy.linalg.cho_solve((factor, True), rhs)


def posterior_linear_gaussian(
    H: LinearOperator, g, noise: NoiseModel, prior: GaussianPrior
) -> GaussianBelief:
    """Exact posterior of f given g under Gaussian prior and likelihood.

    mean = f_bar + (H'H + lam*I)^-1 H'(g - H f_bar), lam = v_noise/v_prior;
    covariance = v_noise * (H'H + lam*I)^-1. Solved by Cholesky; the mean
    never goes through an explicit inverse.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (H.rows,):
        raise DimensionMismatchError.expected("observation", H.rows, g.shape)
    if prior.mean.shape != (H.cols,):
        raise DimensionMismatchError.expected("prior mean", H.cols, prior.mean.shape)
    lam = noise.variance / prior.variance
    gram = operators.gram_regularized(H, lam)
    factor = _cholesky_spd(gram, what="regularized Gram matrix")
    residual = g - H.apply(prior.mean)
    mean = prior.mean + _solve_spd(factor, H.apply_adjoint(residual))
    cov = noise.variance * _solve_spd(factor, np.eye(H.cols))
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean=mean, covariance=cov, lam=lam)


def supervised_posterior(
    H: LinearOperator, g_t, f_t, noise: NoiseModel, prior: GaussianPrior
) -> GaussianBelief:
    """Posterior fusing a direct observation f_t of f with the indirect g_t.

    Minimizes the quadratic energy
        (1/2v_f)|f_t - f|^2 + (1/2v_e)|g_t - Hf|^2 + (1/2v_i)|f - f_bar|^2,
    i.e. precision A = (1/v_f + 1/v_i) I + (1/v_e) H'H and
    mean = A^-1 [f_t/v_f + H'g_t/v_e + f_bar/v_i]; v_i = +inf drops the pull.
    """
    g_t = np.asarray(g_t, dtype=float)
    f_t = np.asarray(f_t, dtype=float)
    if g_t.shape != (H.rows,):
        raise DimensionMismatchError.expected("observation", H.rows, g_t.shape)
    if f_t.shape != (H.cols,):
        raise DimensionMismatchError.expected("direct observation", H.cols, f_t.shape)
    if prior.mean.shape != (H.cols,):
        raise DimensionMismatchError.expected("prior mean", H.cols, prior.mean.shape)
    v_f, v_e, v_i = prior.variance, noise.variance, prior.extra_variance
    w_i = 0.0 if math.isinf(v_i) else 1.0 / v_i
    mat = operators.materialize(H)
    precision = (mat.T @ mat) / v_e
    precision = 0.5 * (precision + precision.T)
    precision[np.diag_indices_from(precision)] += 1.0 / v_f + w_i
    rhs = f_t / v_f + H.apply_adjoint(g_t) / v_e + w_i * prior.mean
    factor = _cholesky_spd(precision, what="posterior precision")
    mean = _solve_spd(factor, rhs)
    cov = _solve_spd(factor, np.eye(H.cols))
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean=mean, covariance=cov, lam=v_e / v_f)


def conditioning_oracle(
    H: LinearOperator, g, noise: NoiseModel, prior: GaussianPrior
) -> GaussianBelief:
    """Posterior by block elimination on the joint Gaussian of (f, g).

    Builds cov[(f, g)] = [[v_f I, v_f H'], [H v_f, v_f H H' + v_e I]] and
    conditions on g. Algebraically independent of the normal-equations
    route; intended as a test oracle at desk scale.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (H.rows,):
        raise DimensionMismatchError.expected("observation", H.rows, g.shape)
    if prior.mean.shape != (H.cols,):
        raise DimensionMismatchError.expected("prior mean", H.cols, prior.mean.shape)
    mat = operators.materialize(H)
    v_f, v_e = prior.variance, noise.variance
    cov_fg = v_f * mat.T
    cov_gg = v_f * (mat @ mat.T) + v_e * np.eye(H.rows)
    try:
        gain = np.linalg.solve(cov_gg, cov_fg.T).T
    except np.linalg.LinAlgError:
        raise ConditioningError("observation covariance block is singular") from None
    mean = prior.mean + gain @ (g - mat @ prior.mean)
    cov = v_f * np.eye(H.cols) - gain @ cov_fg.T
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean=mean, covariance=cov, lam=v_e / v_f)


def normal_quantile_two_sided(level: float) -> float:
    """z with P(|Z| <= z) = level for standard normal Z, by bisection on erf."""
    if not 0.0 < level < 1.0:
        raise ParameterError(f"level must lie in (0, 1), got {level}")
    lo, hi = 0.0, 1.0
    while math.erf(hi / math.sqrt(2.0)) < level:
        hi *= 2.0
        if hi > 1e3:  # erf saturates to 1.0 long before this
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erf(mid / math.sqrt(2.0)) < level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12:
            break
    return 0.5 * (lo + hi)


def credible_interval(belief: GaussianBelief, level: float) -> np.ndarray:
    """Per-component two-sided interval mean_k +/- z*std_k, shape (n, 2)."""
    z = normal_quantile_two_sided(level)
    half = z * belief.std
    return np.column_stack([belief.mean - half, belief.mean + half])
