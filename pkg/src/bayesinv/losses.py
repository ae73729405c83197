"""Energy terms and training criteria with analytic gradients.

The training objectives decompose as
    total = j_nn + j_phys + j_prior_f + j_sparse + j_weights
where j_nn is the supervised output residual, j_phys the forward-model
misfit, j_prior_f the Gaussian pull toward the prior mean, j_sparse the
smoothed-l_beta penalty on first differences of the reconstruction, and
j_weights the penalty on the network weights. Quadratic terms carry the
1/(2*variance) convention so the supervised criterion evaluated at the
analytic minimizer equals the fused-posterior energy exactly.

Every per-sample reduction is a fixed-order sequential sum by sample
index, keeping repeated evaluations bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BatchError, DimensionMismatchError, ParameterError
from .operators import LinearOperator
from .serialize import fmt_float

HISTORY_HEADER = ("epoch", "j_nn", "j_phys", "j_prior_f", "j_sparse", "j_weights", "total")


@dataclass(frozen=True)
class LossWeights:
    """Hyperparameters of the training criteria.

    w_data, w_phys and w_prior are the 1/(2*variance) weights of the
    quadratic terms; gamma/beta shape the sparsity penalty on first
    differences of the reconstruction and gamma_w/beta_w the penalty on
    the flat network weights. smooth_eps smooths |x| into
    sqrt(x^2 + eps^2) so every loss stays differentiable for beta < 2.
    """

    w_data: float = 0.0
    w_phys: float = 0.0
    w_prior: float = 0.0
    gamma: float = 0.0
    beta: float = 2.0
    gamma_w: float = 0.0
    beta_w: float = 2.0
    smooth_eps: float = 1e-3

    def __post_init__(self):
        for name in ("w_data", "w_phys", "w_prior", "gamma", "gamma_w"):
            value = getattr(self, name)
            if not value >= 0:
                raise ParameterError(f"{name} must be >= 0, got {value}")
        for name in ("beta", "beta_w"):
            value = getattr(self, name)
            if not 0 < value <= 2:
                raise ParameterError(f"{name} must lie in (0, 2], got {value}")
        if not self.smooth_eps >= 0:
            raise ParameterError(f"smooth_eps must be >= 0, got {self.smooth_eps}")
        if (self.beta < 2 or self.beta_w < 2) and not self.smooth_eps > 0:
            raise ParameterError("smooth_eps must be > 0 when beta or beta_w is < 2")

    @classmethod
    def from_variances(
        cls,
        noise_variance: float,
        data_variance: float = math.inf,
        prior_variance: float = math.inf,
        **kwargs,
    ) -> "LossWeights":
        """Build the 1/(2v) weights from variances; +inf disables a term."""

        def half_inv(v):
            if not v > 0:
                raise ParameterError(f"variances must be > 0, got {v}")
            return 0.0 if math.isinf(v) else 0.5 / v

        return cls(
            w_data=half_inv(data_variance),
            w_phys=half_inv(noise_variance),
            w_prior=half_inv(prior_variance),
            **kwargs,
        )

    def to_json_dict(self) -> dict:
        return {
            "w_data": self.w_data,
            "w_phys": self.w_phys,
            "w_prior": self.w_prior,
            "gamma": self.gamma,
            "beta": self.beta,
            "gamma_w": self.gamma_w,
            "beta_w": self.beta_w,
            "smooth_eps": self.smooth_eps,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LossWeights":
        return cls(**{k: float(doc[k]) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class LossBreakdown:
    """One evaluation of a training criterion, split by term."""

    j_nn: float = 0.0
    j_phys: float = 0.0
    j_prior_f: float = 0.0
    j_sparse: float = 0.0
    j_weights: float = 0.0
    total: float = 0.0

    @classmethod
    def of(cls, j_nn=0.0, j_phys=0.0, j_prior_f=0.0, j_sparse=0.0, j_weights=0.0):
        total = j_nn + j_phys + j_prior_f + j_sparse + j_weights
        return cls(j_nn, j_phys, j_prior_f, j_sparse, j_weights, total)

    @property
    def residual_part(self) -> float:
        """The classical supervised output-residual term."""
        return self.j_nn

    @property
    def physics_part(self) -> float:
        """Everything informed by the forward model and the priors on f."""
        return self.j_phys + self.j_prior_f + self.j_sparse

    def with_weight_penalty(self, j_weights: float) -> "LossBreakdown":
        return LossBreakdown.of(
            self.j_nn, self.j_phys, self.j_prior_f, self.j_sparse, j_weights
        )

    def to_csv_row(self, epoch: int) -> list[str]:
        return [str(int(epoch))] + [
            fmt_float(v)
            for v in (
                self.j_nn,
                self.j_phys,
                self.j_prior_f,
                self.j_sparse,
                self.j_weights,
                self.total,
            )
        ]

    @classmethod
    def from_csv_row(cls, row) -> tuple[int, "LossBreakdown"]:
        epoch = int(row[0])
        vals = [float(v) for v in row[1:7]]
        return epoch, cls(*vals)


def _check_beta(beta, eps, need_smooth):
    if not 0 < beta <= 2:
        raise ParameterError(f"beta must lie in (0, 2], got {beta}")
    if not eps >= 0:
        raise ParameterError(f"smoothing eps must be >= 0, got {eps}")
    if need_smooth and beta < 2 and eps == 0:
        raise ParameterError("gradient of |x|^beta with beta < 2 needs smoothing eps > 0")


def smoothed_power(x, beta: float, eps: float) -> float:
    """sum_k (x_k^2 + eps^2)^(beta/2); equals sum |x_k|^beta at eps = 0."""
    _check_beta(beta, eps, need_smooth=False)
    x = np.asarray(x, dtype=float)
    return float(np.sum((x * x + eps * eps) ** (0.5 * beta)))


def smoothed_power_grad(x, beta: float, eps: float) -> np.ndarray:
    """Gradient beta * x_k * (x_k^2 + eps^2)^(beta/2 - 1)."""
    _check_beta(beta, eps, need_smooth=True)
    x = np.asarray(x, dtype=float)
    return beta * x * (x * x + eps * eps) ** (0.5 * beta - 1.0)


def sparse_prior_energy(f, D: LinearOperator, weights: LossWeights) -> float:
    """gamma * smoothed_power(D f, beta, smooth_eps)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (D.cols,):
        raise DimensionMismatchError.expected("reconstruction", D.cols, f.shape)
    if weights.gamma == 0.0:
        return 0.0
    return weights.gamma * smoothed_power(D.apply(f), weights.beta, weights.smooth_eps)


def sparse_prior_energy_grad(f, D: LinearOperator, weights: LossWeights) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (D.cols,):
        raise DimensionMismatchError.expected("reconstruction", D.cols, f.shape)
    if weights.gamma == 0.0:
        return np.zeros(D.cols)
    inner = smoothed_power_grad(D.apply(f), weights.beta, weights.smooth_eps)
    return weights.gamma * D.apply_adjoint(inner)


def weight_penalty(w_flat, weights: LossWeights) -> float:
    """gamma_w * smoothed_power(w_flat, beta_w, smooth_eps)."""
    if weights.gamma_w == 0.0:
        return 0.0
    return weights.gamma_w * smoothed_power(w_flat, weights.beta_w, weights.smooth_eps)


def weight_penalty_grad(w_flat, weights: LossWeights) -> np.ndarray:
    w_flat = np.asarray(w_flat, dtype=float)
    if weights.gamma_w == 0.0:
        return np.zeros_like(w_flat)
    return weights.gamma_w * smoothed_power_grad(w_flat, weights.beta_w, weights.smooth_eps)


def _as_batch(vectors, dim, what):
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise BatchError(f"{what} must be a batch of vectors, got shape {arr.shape}")
    if arr.shape[1] != dim:
        raise DimensionMismatchError.expected(what, dim, arr.shape[1])
    return arr


def _check_counts(what_a, a, what_b, b):
    if a.shape[0] != b.shape[0]:
        raise BatchError(
            f"{what_a} has {a.shape[0]} samples but {what_b} has {b.shape[0]}"
        )


def supervised_loss(
    f_nn_batch, g_batch, f_target_batch, H: LinearOperator, f_bar, weights: LossWeights
) -> LossBreakdown:
    """Supervised criterion: data residual + physics misfit + prior pull.

    j_nn      = sum_i w_data  |f_target_i - f_nn_i|^2
    j_phys    = sum_i w_phys  |g_i - H f_nn_i|^2
    j_prior_f = sum_i w_prior |f_bar - f_nn_i|^2
    """
    f_nn = _as_batch(f_nn_batch, H.cols, "network outputs")
    g = _as_batch(g_batch, H.rows, "observations")
    f_t = _as_batch(f_target_batch, H.cols, "reference reconstructions")
    _check_counts("network outputs", f_nn, "observations", g)
    _check_counts("network outputs", f_nn, "reference reconstructions", f_t)
    f_bar = np.asarray(f_bar, dtype=float)
    if f_bar.shape != (H.cols,):
        raise DimensionMismatchError.expected("prior mean", H.cols, f_bar.shape)
    j_nn = j_phys = j_prior = 0.0
    for i in range(f_nn.shape[0]):
        j_nn += weights.w_data * float(np.sum((f_t[i] - f_nn[i]) ** 2))
        resid = g[i] - H.apply(f_nn[i])
        j_phys += weights.w_phys * float(resid @ resid)
        j_prior += weights.w_prior * float(np.sum((f_bar - f_nn[i]) ** 2))
    return LossBreakdown.of(j_nn=j_nn, j_phys=j_phys, j_prior_f=j_prior)


def supervised_loss_grad(
    f_nn_batch, g_batch, f_target_batch, H: LinearOperator, f_bar, weights: LossWeights
) -> np.ndarray:
    """d(total)/d(f_nn_i) for each sample, shape (batch, n)."""
    f_nn = _as_batch(f_nn_batch, H.cols, "network outputs")
    g = _as_batch(g_batch, H.rows, "observations")
    f_t = _as_batch(f_target_batch, H.cols, "reference reconstructions")
    _check_counts("network outputs", f_nn, "observations", g)
    _check_counts("network outputs", f_nn, "reference reconstructions", f_t)
    f_bar = np.asarray(f_bar, dtype=float)
    grads = np.zeros_like(f_nn)
    for i in range(f_nn.shape[0]):
        grad = -2.0 * weights.w_data * (f_t[i] - f_nn[i])
        grad -= 2.0 * weights.w_phys * H.apply_adjoint(g[i] - H.apply(f_nn[i]))
        grad -= 2.0 * weights.w_prior * (f_bar - f_nn[i])
        grads[i] = grad
    return grads


def unsupervised_loss(
    f_nn_batch, g_batch, H: LinearOperator, D: LinearOperator, weights: LossWeights
) -> LossBreakdown:
    """Unsupervised criterion: physics misfit + sparsity of differences.

    j_phys   = sum_i w_phys |g_i - H f_nn_i|^2
    j_sparse = sum_i gamma * smoothed_power(D f_nn_i, beta, smooth_eps)
    The network-weight penalty depends on the weights, not on f, and is
    added by the trainer.
    """
    f_nn = _as_batch(f_nn_batch, H.cols, "network outputs")
    g = _as_batch(g_batch, H.rows, "observations")
    _check_counts("network outputs", f_nn, "observations", g)
    j_phys = j_sparse = 0.0
    for i in range(f_nn.shape[0]):
        resid = g[i] - H.apply(f_nn[i])
        j_phys += weights.w_phys * float(resid @ resid)
        j_sparse += sparse_prior_energy(f_nn[i], D, weights)
    return LossBreakdown.of(j_phys=j_phys, j_sparse=j_sparse)


def unsupervised_loss_grad(
    f_nn_batch, g_batch, H: LinearOperator, D: LinearOperator, weights: LossWeights
) -> np.ndarray:
    f_nn = _as_batch(f_nn_batch, H.cols, "network outputs")
    g = _as_batch(g_batch, H.rows, "observations")
    _check_counts("network outputs", f_nn, "observations", g)
    grads = np.zeros_like(f_nn)
    for i in range(f_nn.shape[0]):
        grad = -2.0 * weights.w_phys * H.apply_adjoint(g[i] - H.apply(f_nn[i]))
        grad += sparse_prior_energy_grad(f_nn[i], D, weights)
        grads[i] = grad
    return grads
