"""Fully-connected surrogate for the inverse map, with exact backprop.

The network takes a whole observation vector as input and emits a whole
reconstruction: amortized inversion. Hidden layers use tanh by default
(relu and softplus are available); the output layer is always linear.
Forward passes record the per-layer workspace needed for reverse-mode
gradients, and `finite_diff_grad` provides the independent oracle the
gradients are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ParameterError, SpecSchemaError
from .serialize import read_json, write_json

ACTIVATIONS = ("tanh", "relu", "softplus")


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer sizes [m, h1, ..., hL, n]; zero hidden layers is a plain affine map."""

    layer_sizes: tuple
    hidden_activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ParameterError(f"need at least input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ParameterError(f"all layer sizes must be >= 1, got {sizes}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ParameterError(
                f"unknown activation {self.hidden_activation!r}, pick one of {ACTIVATIONS}"
            )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def layer_count(self) -> int:
        """Number of affine layers."""
        return len(self.layer_sizes) - 1

    @property
    def parameter_count(self) -> int:
        return sum(
            d_out * (d_in + 1)
            for d_in, d_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )


@dataclass
class MlpParameters:
    """Per-layer weight matrices (d_out, d_in) and bias vectors (d_out,)."""

    arch: MlpArchitecture
    weights: list
    biases: list

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.weights) != self.arch.layer_count or len(self.biases) != self.arch.layer_count:
            raise DimensionMismatchError(
                f"expected {self.arch.layer_count} layers, got "
                f"{len(self.weights)} weights / {len(self.biases)} biases"
            )
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (sizes[layer + 1], sizes[layer])
            if w.shape != want:
                raise DimensionMismatchError(f"layer {layer}: weight shape {w.shape} != {want}")
            if b.shape != (sizes[layer + 1],):
                raise DimensionMismatchError(
                    f"layer {layer}: bias shape {b.shape} != {(sizes[layer + 1],)}"
                )


@dataclass
class ForwardTrace:
    """Backpropagation workspace for one input: per-layer z and activation."""

    inputs: np.ndarray
    pre_activations: list
    activations: list

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class BatchTrace:
    """Same as ForwardTrace but with a leading batch axis on every array."""

    inputs: np.ndarray
    pre_activations: list
    activations: list

    @property
    def outputs(self) -> np.ndarray:
        return self.activations[-1]


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    # softplus, overflow-safe
    return np.logaddexp(0.0, z)


def _activate_deriv(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(float)
    # sigmoid(z), stable on both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(arch: MlpArchitecture, seed: int) -> MlpParameters:
    """Uniform Glorot weights, zero biases, drawn layer by layer.

    Uses numpy's PCG64 generator seeded with `seed`; identical
    (arch, seed) pairs give bitwise-identical parameters.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    sizes = arch.layer_sizes
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpParameters(arch=arch, weights=weights, biases=biases)


def _forward_2d(params: MlpParameters, batch: np.ndarray):
    act_name = params.arch.hidden_activation
    last = params.arch.layer_count - 1
    pre, act = [], []
    a = batch
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = z if layer == last else _activate(act_name, z)
        pre.append(z)
        act.append(a)
    return pre, act


def forward(params: MlpParameters, g) -> tuple:
    """Evaluate the network on one observation; returns (f_nn, trace)."""
    g = np.asarray(g, dtype=float)
    if g.shape != (params.arch.input_size,):
        raise DimensionMismatchError.expected("network input", params.arch.input_size, g.shape)
    pre, act = _forward_2d(params, g[None, :])
    trace = ForwardTrace(
        inputs=g,
        pre_activations=[z[0] for z in pre],
        activations=[a[0] for a in act],
    )
    return trace.output, trace


def forward_batch(params: MlpParameters, g_batch) -> tuple:
    """Vectorized forward over a (batch, m) array; returns (outputs, trace)."""
    g_batch = np.asarray(g_batch, dtype=float)
    if g_batch.ndim != 2 or g_batch.shape[1] != params.arch.input_size:
        raise DimensionMismatchError(
            f"expected batch shape (B, {params.arch.input_size}), got {g_batch.shape}"
        )
    pre, act = _forward_2d(params, g_batch)
    trace = BatchTrace(inputs=g_batch, pre_activations=pre, activations=act)
    return trace.outputs, trace


def _backward_2d(params: MlpParameters, inputs, pre, act, upstream):
    act_name = params.arch.hidden_activation
    last = params.arch.layer_count - 1
    grads_w = [None] * (last + 1)
    grads_b = [None] * (last + 1)
    delta = upstream
    for layer in range(last, -1, -1):
        dz = delta if layer == last else delta * _activate_deriv(
            act_name, pre[layer], act[layer]
        )
        a_prev = inputs if layer == 0 else act[layer - 1]
        grads_w[layer] = dz.T @ a_prev
        grads_b[layer] = dz.sum(axis=0)
        delta = dz @ params.weights[layer]
    return np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
    )


def _check_trace(params, pre_activations):
    sizes = params.arch.layer_sizes
    if len(pre_activations) != params.arch.layer_count:
        raise DimensionMismatchError(
            f"trace has {len(pre_activations)} layers, parameters have {params.arch.layer_count}"
        )
    for layer, z in enumerate(pre_activations):
        if z.shape[-1] != sizes[layer + 1]:
            raise DimensionMismatchError(
                f"trace layer {layer} width {z.shape[-1]} != parameter width {sizes[layer + 1]}"
            )


def backward(params: MlpParameters, trace: ForwardTrace, dL_df) -> np.ndarray:
    """Exact gradient of L w.r.t. every weight and bias, flat layout.

    `dL_df` is the upstream gradient of L with respect to the network
    output; the trace must come from `forward` with these parameters.
    """
    dL_df = np.asarray(dL_df, dtype=float)
    if dL_df.shape != (params.arch.output_size,):
        raise DimensionMismatchError.expected(
            "upstream gradient", params.arch.output_size, dL_df.shape
        )
    _check_trace(params, trace.pre_activations)
    return _backward_2d(
        params,
        trace.inputs[None, :],
        [z[None, :] for z in trace.pre_activations],
        [a[None, :] for a in trace.activations],
        dL_df[None, :],
    )


def backward_batch(params: MlpParameters, trace: BatchTrace, dL_df_batch) -> np.ndarray:
    """Gradient summed over the batch (matrix products reduce in index order)."""
    dL_df_batch = np.asarray(dL_df_batch, dtype=float)
    if dL_df_batch.shape != trace.outputs.shape:
        raise DimensionMismatchError(
            f"upstream gradient shape {dL_df_batch.shape} != outputs {trace.outputs.shape}"
        )
    _check_trace(params, trace.pre_activations)
    return _backward_2d(
        params, trace.inputs, trace.pre_activations, trace.activations, dL_df_batch
    )


def flatten(params: MlpParameters) -> np.ndarray:
    """Concatenate layer by layer: row-major weights, then bias."""
    return np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(params.weights, params.biases)]
    )


def unflatten(arch: MlpArchitecture, flat) -> MlpParameters:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (arch.parameter_count,):
        raise DimensionMismatchError.expected("flat parameters", arch.parameter_count, flat.shape)
    weights, biases = [], []
    offset = 0
    sizes = arch.layer_sizes
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[offset : offset + d_out * d_in].reshape(d_out, d_in).copy())
        offset += d_out * d_in
        biases.append(flat[offset : offset + d_out].copy())
        offset += d_out
    return MlpParameters(arch=arch, weights=weights, biases=biases)


def finite_diff_grad(loss_at, flat, h) -> np.ndarray:
    """Central differences (L(x + h e_k) - L(x - h e_k)) / 2h per coordinate.

    `h` may be a scalar or a per-coordinate array.
    """
    flat = np.asarray(flat, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), flat.shape)
    if not np.all(h > 0):
        raise ParameterError("finite-difference step must be > 0")
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        bumped = flat.copy()
        bumped[k] = flat[k] + h[k]
        hi = loss_at(bumped)
        bumped[k] = flat[k] - h[k]
        lo = loss_at(bumped)
        grad[k] = (hi - lo) / (2.0 * h[k])
    return grad


def save_model(params: MlpParameters, path, init_seed=None, extra=None) -> None:
    """Model file: architecture, seed provenance and flat parameters (17 digits)."""
    doc = {
        "layer_sizes": list(params.arch.layer_sizes),
        "activation": params.arch.hidden_activation,
        "init_seed": init_seed,
        "flat": flatten(params).tolist(),
    }
    if extra:
        doc.update(extra)
    write_json(path, doc)


def load_model(path) -> tuple:
    """Returns (MlpParameters, metadata dict)."""
    doc = read_json(path)
    for key in ("layer_sizes", "activation", "flat"):
        if key not in doc:
            raise SpecSchemaError(f"model file {path} is missing key {key!r}")
    arch = MlpArchitecture(
        layer_sizes=tuple(doc["layer_sizes"]), hidden_activation=doc["activation"]
    )
    params = unflatten(arch, np.asarray(doc["flat"], dtype=float))
    meta = {k: v for k, v in doc.items() if k != "flat"}
    return params, meta
