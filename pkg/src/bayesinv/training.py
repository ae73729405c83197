"""First-order MAP estimation: surrogate training and direct f-space solves.

All runs are deterministic given (config, dataset, seeds): full-batch
gradients by default, a fixed adaptive-moment update rule, and
fixed-order reductions. Divergence (any non-finite loss) aborts with
diagnostics instead of silently continuing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from . import network as nn
from .errors import BatchError, DimensionMismatchError, DivergenceError, ParameterError
from .losses import LossBreakdown, LossWeights
from .network import MlpArchitecture, MlpParameters
from .operators import LinearOperator
from .serialize import write_table_csv

# step-size ladder for direct f-space solves; plain constant-step Adam
# stalls at an error floor proportional to the step size
_MAP_ALPHA_LADDER = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


@dataclass
class OptimizerState:
    """Adaptive-moment state: first/second moments, step count, hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.m.shape != self.v.shape:
            raise DimensionMismatchError(
                f"moment shapes differ: {self.m.shape} vs {self.v.shape}"
            )
        if np.any(self.v < 0):
            raise ParameterError("second moments must be componentwise >= 0")
        if self.t < 0:
            raise ParameterError(f"step counter must be >= 0, got {self.t}")

    @classmethod
    def fresh(cls, size: int, alpha: float = 1e-3) -> "OptimizerState":
        return cls(m=np.zeros(size), v=np.zeros(size), alpha=alpha)


def adam_step(state: OptimizerState, grad, flat) -> tuple:
    """One update: bias-corrected moments, step -alpha * mhat/(sqrt(vhat) + 1e-8)."""
    grad = np.asarray(grad, dtype=float)
    flat = np.asarray(flat, dtype=float)
    if grad.shape != state.m.shape or flat.shape != state.m.shape:
        raise DimensionMismatchError(
            f"gradient {grad.shape} / parameters {flat.shape} do not match "
            f"optimizer state {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_flat = flat - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, m=m, v=v, t=t)
    return new_state, new_flat


@dataclass(frozen=True)
class TrainConfig:
    """Run-length, stopping rules and loss hyperparameters for one training."""

    epochs: int
    weights: LossWeights
    seed: int = 0
    batch_size: int = 0  # 0 means full batch
    alpha: float = 1e-3
    improvement_tol: float = 1e-9
    improvement_window: int = 50
    grad_tol: float = 1e-10
    snapshot_count: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 0:
            raise ParameterError(f"batch size must be >= 0, got {self.batch_size}")
        if self.snapshot_count < 1:
            raise ParameterError("snapshot_count must be >= 1")

    def to_json_dict(self) -> dict:
        doc = {
            "epochs": self.epochs,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "alpha": self.alpha,
            "improvement_tol": self.improvement_tol,
            "improvement_window": self.improvement_window,
            "grad_tol": self.grad_tol,
            "snapshot_count": self.snapshot_count,
            "weights": self.weights.to_json_dict(),
        }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainConfig":
        kwargs = dict(doc)
        kwargs["weights"] = LossWeights.from_json_dict(kwargs["weights"])
        return cls(**kwargs)


@dataclass
class TrainReport:
    """Per-epoch loss history plus stopping diagnostics.

    `best_total` is the nonincreasing best-so-far envelope of the total
    loss. `snapshots` maps epoch -> flat parameters at the start of that
    epoch (the point the logged breakdown was computed at). Wall-clock is
    excluded from equality comparisons and from persisted artifacts so
    repeated runs stay byte-identical.
    """

    history: list
    best_total: list
    best_epoch: int
    final_grad_norm: float
    stop_reason: str
    snapshots: dict
    wall_clock_seconds: float = field(compare=False, default=0.0)

    def history_csv(self) -> tuple:
        header = list(L.HISTORY_HEADER)
        rows = [bd.to_csv_row(epoch) for epoch, bd in enumerate(self.history)]
        return header, rows

    def write_history_csv(self, path) -> None:
        header, rows = self.history_csv()
        write_table_csv(path, header, rows)


def _run(eval_full, minibatch_grads, flat0, config: TrainConfig):
    """Shared descent loop; returns (best flat, TrainReport)."""
    started = time.perf_counter()
    flat = np.asarray(flat0, dtype=float).copy()
    state = OptimizerState.fresh(flat.size, alpha=config.alpha)
    snapshot_every = max(1, config.epochs // config.snapshot_count)

    history, envelope, snapshots = [], [], {}
    best = np.inf
    best_flat = flat.copy()
    best_epoch = 0
    grad_norm = np.inf
    stop_reason = "max_epochs"
    at_epoch_start = flat

    for epoch in range(config.epochs):
        at_epoch_start = flat.copy()
        breakdown, grad = eval_full(at_epoch_start)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(
                f"non-finite loss {breakdown.total} at epoch {epoch}",
                epoch=epoch,
                breakdown=breakdown,
            )
        history.append(breakdown)
        if breakdown.total < best:
            best = breakdown.total
            best_flat = at_epoch_start
            best_epoch = epoch
        envelope.append(best)
        if epoch % snapshot_every == 0:
            snapshots[epoch] = at_epoch_start

        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= config.grad_tol:
            stop_reason = "grad_tol"
            break
        window = config.improvement_window
        if epoch >= window:
            then = envelope[epoch - window]
            if (then - best) < config.improvement_tol * max(abs(then), 1e-300):
                stop_reason = "no_improvement"
                break

        if minibatch_grads is None:
            state, flat = adam_step(state, grad, flat)
        else:
            for part in minibatch_grads(flat):
                state, flat = adam_step(state, part, flat)

    # the last logged epoch keeps the parameters its breakdown was computed at
    snapshots.setdefault(len(history) - 1, at_epoch_start)
    report = TrainReport(
        history=history,
        best_total=envelope,
        best_epoch=best_epoch,
        final_grad_norm=grad_norm,
        stop_reason=stop_reason,
        snapshots=snapshots,
        wall_clock_seconds=time.perf_counter() - started,
    )
    return best_flat, report


def _check_arch(arch: MlpArchitecture, H: LinearOperator):
    if arch.input_size != H.rows:
        raise DimensionMismatchError(
            f"network input size {arch.input_size} != observation length {H.rows}"
        )
    if arch.output_size != H.cols:
        raise DimensionMismatchError(
            f"network output size {arch.output_size} != parameter length {H.cols}"
        )


def _batch_slices(count: int, batch_size: int):
    if batch_size <= 0 or batch_size >= count:
        return None
    return [slice(i, min(i + batch_size, count)) for i in range(0, count, batch_size)]


def train_supervised(
    g_batch, f_batch, H: LinearOperator, f_bar, arch: MlpArchitecture, config: TrainConfig
) -> tuple:
    """MAP training on labeled pairs: data + physics + prior + weight penalty.

    Returns (parameters at the best-observed total loss, TrainReport).
    """
    g_batch = np.asarray(g_batch, dtype=float)
    f_batch = np.asarray(f_batch, dtype=float)
    if g_batch.ndim != 2 or f_batch.ndim != 2:
        raise BatchError("expected 2-D (batch, dim) arrays of observations and targets")
    if g_batch.shape[0] != f_batch.shape[0]:
        raise BatchError(
            f"{g_batch.shape[0]} observations vs {f_batch.shape[0]} reference vectors"
        )
    if g_batch.shape[0] == 0:
        raise BatchError("training set is empty")
    _check_arch(arch, H)
    f_bar = np.asarray(f_bar, dtype=float)
    w = config.weights

    def eval_full(flat):
        params = nn.unflatten(arch, flat)
        outs, trace = nn.forward_batch(params, g_batch)
        breakdown = L.supervised_loss(outs, g_batch, f_batch, H, f_bar, w)
        upstream = L.supervised_loss_grad(outs, g_batch, f_batch, H, f_bar, w)
        grad = nn.backward_batch(params, trace, upstream) + L.weight_penalty_grad(flat, w)
        return breakdown.with_weight_penalty(L.weight_penalty(flat, w)), grad

    slices = _batch_slices(g_batch.shape[0], config.batch_size)
    minibatch = None
    if slices is not None:

        def minibatch(flat):
            params = nn.unflatten(arch, flat)
            for sl in slices:
                outs, trace = nn.forward_batch(params, g_batch[sl])
                upstream = L.supervised_loss_grad(outs, g_batch[sl], f_batch[sl], H, f_bar, w)
                yield nn.backward_batch(params, trace, upstream) + L.weight_penalty_grad(
                    flat, w
                )

    flat0 = nn.flatten(nn.init_params(arch, config.seed))
    best_flat, report = _run(eval_full, minibatch, flat0, config)
    return nn.unflatten(arch, best_flat), report


def train_unsupervised(
    g_batch, H: LinearOperator, D: LinearOperator, arch: MlpArchitecture, config: TrainConfig
) -> tuple:
    """MAP training from observations alone: physics + sparsity + weight penalty."""
    g_batch = np.asarray(g_batch, dtype=float)
    if g_batch.ndim != 2:
        raise BatchError("expected a 2-D (batch, m) array of observations")
    if g_batch.shape[0] == 0:
        raise BatchError("training set is empty")
    _check_arch(arch, H)
    w = config.weights

    def eval_full(flat):
        params = nn.unflatten(arch, flat)
        outs, trace = nn.forward_batch(params, g_batch)
        breakdown = L.unsupervised_loss(outs, g_batch, H, D, w)
        upstream = L.unsupervised_loss_grad(outs, g_batch, H, D, w)
        grad = nn.backward_batch(params, trace, upstream) + L.weight_penalty_grad(flat, w)
        return breakdown.with_weight_penalty(L.weight_penalty(flat, w)), grad

    slices = _batch_slices(g_batch.shape[0], config.batch_size)
    minibatch = None
    if slices is not None:

        def minibatch(flat):
            params = nn.unflatten(arch, flat)
            for sl in slices:
                outs, trace = nn.forward_batch(params, g_batch[sl])
                upstream = L.unsupervised_loss_grad(outs, g_batch[sl], H, D, w)
                yield nn.backward_batch(params, trace, upstream) + L.weight_penalty_grad(
                    flat, w
                )

    flat0 = nn.flatten(nn.init_params(arch, config.seed))
    best_flat, report = _run(eval_full, minibatch, flat0, config)
    return nn.unflatten(arch, best_flat), report


def map_estimate_direct(
    g, H: LinearOperator, D: LinearOperator, weights: LossWeights, config: TrainConfig,
    f_bar=None,
) -> np.ndarray:
    """Direct regularized solve over f (no network).

    Minimizes w_phys*|g - Hf|^2 + gamma*smoothed_power(Df) (+ optional
    w_prior*|f - f_bar|^2) with the same update rule as training, run
    through a fixed step-size ladder. With beta=2, D=I, f_bar=0 this
    reproduces the analytic posterior mean.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (H.rows,):
        raise DimensionMismatchError.expected("observation", H.rows, g.shape)
    if D.cols != H.cols:
        raise DimensionMismatchError(
            f"regularizer input length {D.cols} != parameter length {H.cols}"
        )
    if f_bar is not None:
        f_bar = np.asarray(f_bar, dtype=float)
        if f_bar.shape != (H.cols,):
            raise DimensionMismatchError.expected("prior mean", H.cols, f_bar.shape)

    def objective_grad(f):
        resid = g - H.apply(f)
        value = weights.w_phys * float(resid @ resid)
        grad = -2.0 * weights.w_phys * H.apply_adjoint(resid)
        value += L.sparse_prior_energy(f, D, weights)
        grad += L.sparse_prior_energy_grad(f, D, weights)
        if f_bar is not None and weights.w_prior > 0:
            pull = f - f_bar
            value += weights.w_prior * float(pull @ pull)
            grad += 2.0 * weights.w_prior * pull
        return value, grad

    f = np.zeros(H.cols) if f_bar is None else f_bar.copy()
    state = OptimizerState.fresh(f.size, alpha=_MAP_ALPHA_LADDER[0])
    steps_per_stage = max(1, -(-config.epochs // len(_MAP_ALPHA_LADDER)))
    step = 0
    for alpha in _MAP_ALPHA_LADDER:
        state = replace(state, alpha=alpha)
        for _ in range(steps_per_stage):
            if step >= config.epochs:
                break
            value, grad = objective_grad(f)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite objective {value} at step {step}", epoch=step
                )
            if float(np.linalg.norm(grad)) <= config.grad_tol:
                return f
            state, f = adam_step(state, grad, f)
            step += 1
    return f


@dataclass
class EnsembleSummary:
    """Componentwise spread of reconstructions across retrained networks.

    A seed-ensemble heuristic, not a posterior.
    """

    mean: np.ndarray
    std: np.ndarray
    member_outputs: np.ndarray  # (members, inputs, n)
    seeds: tuple


def ensemble_uncertainty(
    g_batch,
    f_batch,
    H: LinearOperator,
    arch: MlpArchitecture,
    config: TrainConfig,
    members: int,
    test_inputs=None,
    D: LinearOperator = None,
    f_bar=None,
    seeds=None,
) -> EnsembleSummary:
    """Train `members` networks with consecutive seeds; summarize spread.

    Supervised when f_batch is given, otherwise unsupervised (needs D).
    `test_inputs` defaults to the training observations.
    """
    if members < 2:
        raise ParameterError(f"need at least 2 ensemble members, got {members}")
    if seeds is None:
        seeds = tuple(config.seed + k for k in range(members))
    else:
        seeds = tuple(int(s) for s in seeds)
        if len(seeds) != members:
            raise ParameterError(f"got {len(seeds)} seeds for {members} members")
    g_batch = np.asarray(g_batch, dtype=float)
    test = g_batch if test_inputs is None else np.asarray(test_inputs, dtype=float)

    outputs = []
    for k, seed in enumerate(seeds):
        member_cfg = replace(config, seed=seed)
        try:
            if f_batch is not None:
                fb = np.zeros(H.cols) if f_bar is None else f_bar
                params, _ = train_supervised(g_batch, f_batch, H, fb, arch, member_cfg)
            else:
                if D is None:
                    raise ParameterError("unsupervised ensemble needs a difference operator")
                params, _ = train_unsupervised(g_batch, H, D, arch, member_cfg)
        except DivergenceError as err:
            raise DivergenceError(
                f"ensemble member {k} (seed {seed}): {err}",
                epoch=err.epoch,
                breakdown=err.breakdown,
            ) from err
        outs, _ = nn.forward_batch(params, test)
        outputs.append(outs)
    stacked = np.stack(outputs)
    return EnsembleSummary(
        mean=stacked.mean(axis=0),
        std=stacked.std(axis=0, ddof=1),
        member_outputs=stacked,
        seeds=seeds,
    )
