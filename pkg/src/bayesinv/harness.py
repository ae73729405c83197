"""Experiment front end: synthetic data, pipelines, metrics, persistence.

A ProblemSpec JSON document fully determines a run: operator, sizes,
noise, prior family, dataset sizes, master seed, loss weights, network
architecture and training budget. Its canonical-JSON hash identifies the
run, and repeating any pipeline under a fixed spec reproduces the
emitted CSV/JSON artifacts byte for byte (timing never enters files).

Dataset files use `sample,role,index,value` rows (role g or f); single
vectors use `index,value`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytic, network, operators, training
from .analytic import GaussianBelief, GaussianPrior, NoiseModel
from .errors import (
    BatchError,
    DimensionMismatchError,
    MissingFileError,
    ParameterError,
    SpecSchemaError,
)
from .losses import LossWeights
from .network import MlpArchitecture
from .operators import LinearOperator
from .serialize import (
    dumps_canonical,
    fmt_float,
    read_json,
    read_table_csv,
    sha256_hex,
    write_json,
    write_table_csv,
    write_vector_csv,
    read_vector_csv,
)
from .training import TrainConfig

MODES = ("supervised", "unsupervised")
OPERATOR_KINDS = ("identity", "dense", "convolution", "mask")
PRIOR_FAMILIES = ("gaussian", "piecewise_constant")
REG_OPERATORS = ("identity", "first_difference")
COVERAGE_LEVELS = (0.5, 0.9)

DEFAULT_MAP_EPOCHS = 14000

METRICS_HEADER = ("instance", "error", "psnr_db", "zero_truth")
REPORT_HEADER = (
    "method",
    "instances",
    "aggregate_rel_l2",
    "mean_psnr_db",
    "coverage_50",
    "coverage_90",
)


def _require(doc, key, kinds, where):
    if key not in doc:
        raise SpecSchemaError(f"{where}: missing key {key!r}")
    value = doc[key]
    if kinds is not None and not isinstance(value, kinds):
        raise SpecSchemaError(f"{where}: key {key!r} has type {type(value).__name__}")
    return value


@dataclass
class ProblemSpec:
    """Everything that defines one synthetic inversion experiment."""

    name: str
    operator: dict
    n: int
    m: int
    noise_variance: float
    prior: dict
    train_count: int
    test_count: int
    seed: int
    mode: str
    weights: LossWeights
    reg_operator: str = "identity"
    architecture: dict | None = None
    train: dict | None = None
    map_epochs: int = DEFAULT_MAP_EPOCHS

    def __post_init__(self):
        if self.mode not in MODES:
            raise SpecSchemaError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reg_operator not in REG_OPERATORS:
            raise SpecSchemaError(
                f"reg_operator must be one of {REG_OPERATORS}, got {self.reg_operator!r}"
            )
        for name in ("n", "m", "train_count", "test_count"):
            if getattr(self, name) < 1:
                raise SpecSchemaError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_variance < 0:
            raise SpecSchemaError(
                f"noise variance must be >= 0, got {self.noise_variance}"
            )
        if self.map_epochs < 1:
            raise SpecSchemaError(f"map_epochs must be >= 1, got {self.map_epochs}")
        kind = _require(self.operator, "kind", str, "operator")
        if kind not in OPERATOR_KINDS:
            raise SpecSchemaError(f"unknown operator kind {kind!r}")
        family = _require(self.prior, "family", str, "prior")
        if family not in PRIOR_FAMILIES:
            raise SpecSchemaError(f"unknown prior family {family!r}")

    # -- construction of typed pieces -------------------------------------

    def build_operator(self) -> LinearOperator:
        kind = self.operator["kind"]
        if kind == "identity":
            if self.m != self.n:
                raise SpecSchemaError("identity operator needs m == n")
            return operators.IdentityOperator(self.n)
        if kind == "convolution":
            if self.m != self.n:
                raise SpecSchemaError("convolution operator needs m == n")
            kernel = _require(self.operator, "kernel", list, "operator")
            return operators.Convolution1D(kernel, self.n)
        if kind == "mask":
            keep = _require(self.operator, "keep", list, "operator")
            op = operators.MaskOperator(keep, self.n)
            if op.rows != self.m:
                raise SpecSchemaError(f"mask keeps {op.rows} indices but m = {self.m}")
            return op
        if "matrix" in self.operator:
            mat = np.asarray(self.operator["matrix"], dtype=float)
            if mat.shape != (self.m, self.n):
                raise SpecSchemaError(
                    f"dense matrix shape {mat.shape} != (m, n) = {(self.m, self.n)}"
                )
            return operators.DenseOperator(mat)
        op_seed = int(_require(self.operator, "seed", (int,), "operator"))
        scale = float(self.operator.get("scale", 1.0))
        rng = np.random.Generator(np.random.PCG64(op_seed))
        return operators.DenseOperator(scale * rng.standard_normal((self.m, self.n)))

    def build_reg_operator(self) -> LinearOperator:
        if self.reg_operator == "identity":
            return operators.IdentityOperator(self.n)
        return operators.first_difference(self.n)

    def prior_mean(self) -> np.ndarray:
        mean = self.prior.get("mean", "zeros")
        if isinstance(mean, str):
            if mean != "zeros":
                raise SpecSchemaError(f"unknown prior mean source {mean!r}")
            return np.zeros(self.n)
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (self.n,):
            raise SpecSchemaError(f"prior mean length {mean.shape} != n = {self.n}")
        return mean

    def gaussian_prior(self) -> GaussianPrior:
        if self.prior["family"] != "gaussian":
            raise ParameterError(
                "analytic inference needs a gaussian prior family, "
                f"this spec uses {self.prior['family']!r}"
            )
        variance = float(_require(self.prior, "variance", (int, float), "prior"))
        return GaussianPrior(mean=self.prior_mean(), variance=variance)

    def build_architecture(self) -> MlpArchitecture:
        doc = self.architecture or {"hidden": [], "activation": "tanh"}
        hidden = list(doc.get("hidden", []))
        activation = doc.get("activation", "tanh")
        return MlpArchitecture(
            layer_sizes=tuple([self.m] + hidden + [self.n]),
            hidden_activation=activation,
        )

    def train_config(self, seed=None) -> TrainConfig:
        doc = dict(self.train or {})
        doc.setdefault("epochs", 1000)
        if seed is not None:
            doc["seed"] = int(seed)
        else:
            doc.setdefault("seed", self.seed)
        return TrainConfig(weights=self.weights, **doc)

    def map_config(self) -> TrainConfig:
        seed = (self.train or {}).get("seed", self.seed)
        return TrainConfig(epochs=self.map_epochs, weights=self.weights, seed=seed)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        doc = {
            "name": self.name,
            "operator": self.operator,
            "n": self.n,
            "m": self.m,
            "noise_variance": self.noise_variance,
            "prior": self.prior,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "seed": self.seed,
            "mode": self.mode,
            "weights": self.weights.to_json_dict(),
            "reg_operator": self.reg_operator,
            "map_epochs": self.map_epochs,
        }
        if self.architecture is not None:
            doc["architecture"] = self.architecture
        if self.train is not None:
            doc["train"] = self.train
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ProblemSpec":
        where = "problem spec"
        return cls(
            name=str(_require(doc, "name", str, where)),
            operator=_require(doc, "operator", dict, where),
            n=int(_require(doc, "n", int, where)),
            m=int(_require(doc, "m", int, where)),
            noise_variance=float(_require(doc, "noise_variance", (int, float), where)),
            prior=_require(doc, "prior", dict, where),
            train_count=int(_require(doc, "train_count", int, where)),
            test_count=int(_require(doc, "test_count", int, where)),
            seed=int(_require(doc, "seed", int, where)),
            mode=str(_require(doc, "mode", str, where)),
            weights=LossWeights.from_json_dict(_require(doc, "weights", dict, where)),
            reg_operator=str(doc.get("reg_operator", "identity")),
            architecture=doc.get("architecture"),
            train=doc.get("train"),
            map_epochs=int(doc.get("map_epochs", DEFAULT_MAP_EPOCHS)),
        )

    def canonical_json(self) -> str:
        return dumps_canonical(self.to_json_dict(), indent=2)

    def spec_hash(self) -> str:
        return sha256_hex(dumps_canonical(self.to_json_dict()))[:16]

    def with_seed(self, seed: int) -> "ProblemSpec":
        return replace(self, seed=int(seed))


def load_problem_spec(path) -> ProblemSpec:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise SpecSchemaError(f"{path}: spec document must be a JSON object")
    return ProblemSpec.from_json_dict(doc)


# -- dataset generation ------------------------------------------------------


@dataclass
class Dataset:
    """Observations (and truths, when carried) plus generation metadata."""

    mode: str
    observations: np.ndarray  # (count, m)
    truths: np.ndarray | None  # (count, n) or None
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.observations.shape[0]


def _draw_truths(spec: ProblemSpec, rng, count: int) -> np.ndarray:
    family = spec.prior["family"]
    if family == "gaussian":
        variance = float(_require(spec.prior, "variance", (int, float), "prior"))
        if variance <= 0:
            raise SpecSchemaError(f"gaussian prior variance must be > 0, got {variance}")
        mean = spec.prior_mean()
        return mean + math.sqrt(variance) * rng.standard_normal((count, spec.n))
    seg_lo, seg_hi = (int(v) for v in _require(spec.prior, "segments", list, "prior"))
    amp_lo, amp_hi = (float(v) for v in _require(spec.prior, "amplitude", list, "prior"))
    if not 1 <= seg_lo <= seg_hi <= spec.n:
        raise SpecSchemaError(f"segment range [{seg_lo}, {seg_hi}] invalid for n={spec.n}")
    out = np.zeros((count, spec.n))
    for i in range(count):
        segments = int(rng.integers(seg_lo, seg_hi + 1))
        cuts = np.sort(rng.choice(np.arange(1, spec.n), size=segments - 1, replace=False))
        amplitudes = rng.uniform(amp_lo, amp_hi, size=segments)
        bounds = np.concatenate([[0], cuts, [spec.n]])
        for k in range(segments):
            out[i, bounds[k] : bounds[k + 1]] = amplitudes[k]
    return out


def generate_dataset(spec: ProblemSpec, which: str = "train") -> Dataset:
    """Draw truths from the prior family and observations g = H f + noise.

    Child generators are spawned deterministically from the master seed;
    the train and test splits use disjoint children. The test split
    always carries the truths (evaluation needs them); the train split
    carries them only in supervised mode.
    """
    if which not in ("train", "test"):
        raise ParameterError(f"dataset split must be train or test, got {which!r}")
    count = spec.train_count if which == "train" else spec.test_count
    children = np.random.SeedSequence(spec.seed).spawn(4)
    f_child, noise_child = (children[0], children[1]) if which == "train" else (
        children[2],
        children[3],
    )
    op = spec.build_operator()
    truths = _draw_truths(spec, np.random.Generator(np.random.PCG64(f_child)), count)
    noise_rng = np.random.Generator(np.random.PCG64(noise_child))
    noise = (
        math.sqrt(spec.noise_variance) * noise_rng.standard_normal((count, spec.m))
        if spec.noise_variance > 0
        else np.zeros((count, spec.m))
    )
    observations = np.stack([op.apply(truths[i]) for i in range(count)]) + noise
    include_truth = which == "test" or spec.mode == "supervised"
    meta = {
        "spec_hash": spec.spec_hash(),
        "seed": spec.seed,
        "which": which,
        "mode": spec.mode,
        "count": count,
        "n": spec.n,
        "m": spec.m,
        "generator": "PCG64",
        "seed_children": {"truths": 0 if which == "train" else 2,
                          "noise": 1 if which == "train" else 3},
        "with_truth": include_truth,
    }
    return Dataset(
        mode=spec.mode,
        observations=observations,
        truths=truths if include_truth else None,
        meta=meta,
    )


def write_dataset(dataset: Dataset, csv_path) -> None:
    rows = []
    for i in range(dataset.count):
        for j, value in enumerate(dataset.observations[i]):
            rows.append([str(i), "g", str(j), fmt_float(value)])
        if dataset.truths is not None:
            for j, value in enumerate(dataset.truths[i]):
                rows.append([str(i), "f", str(j), fmt_float(value)])
    write_table_csv(csv_path, ("sample", "role", "index", "value"), rows)
    write_json(_meta_path(csv_path), dataset.meta)


def read_dataset(csv_path) -> Dataset:
    header, rows = read_table_csv(csv_path)
    if header != ["sample", "role", "index", "value"]:
        raise SpecSchemaError(f"{csv_path}: unexpected dataset header {header}")
    g_rows, f_rows = {}, {}
    for sample, role, index, value in rows:
        store = g_rows if role == "g" else f_rows
        store.setdefault(int(sample), {})[int(index)] = float(value)
    count = len(g_rows)
    if sorted(g_rows) != list(range(count)):
        raise SpecSchemaError(f"{csv_path}: non-contiguous sample indices")
    observations = np.array(
        [[g_rows[i][j] for j in sorted(g_rows[i])] for i in range(count)], dtype=float
    )
    truths = None
    if f_rows:
        if sorted(f_rows) != list(range(count)):
            raise SpecSchemaError(f"{csv_path}: truth rows do not cover all samples")
        truths = np.array(
            [[f_rows[i][j] for j in sorted(f_rows[i])] for i in range(count)], dtype=float
        )
    meta = {}
    meta_path = _meta_path(csv_path)
    if os.path.exists(meta_path):
        meta = read_json(meta_path)
    mode = meta.get("mode", "supervised" if truths is not None else "unsupervised")
    return Dataset(mode=mode, observations=observations, truths=truths, meta=meta)


def _meta_path(csv_path):
    return str(csv_path)[: -len(".csv")] + ".meta.json" if str(csv_path).endswith(
        ".csv"
    ) else str(csv_path) + ".meta.json"


# -- metrics -----------------------------------------------------------------

PSNR_CAP_DB = 300.0


@dataclass(frozen=True)
class InstanceMetrics:
    """Relative L2 error and PSNR for one reconstruction.

    When the truth is identically zero, relative error is undefined;
    `error` then holds the absolute L2 error and `zero_truth` is set.
    """

    error: float
    psnr_db: float
    zero_truth: bool = False

    def to_csv_row(self, instance: int) -> list:
        return [
            str(instance),
            fmt_float(self.error),
            fmt_float(self.psnr_db),
            "1" if self.zero_truth else "0",
        ]


def evaluate(f_hat, f_true) -> InstanceMetrics:
    """Relative L2 error and PSNR (peak = max|f_true|, capped at 300 dB)."""
    f_hat = np.asarray(f_hat, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    if f_hat.shape != f_true.shape:
        raise DimensionMismatchError(
            f"reconstruction shape {f_hat.shape} != truth shape {f_true.shape}"
        )
    diff = f_hat - f_true
    abs_err = float(np.linalg.norm(diff))
    true_norm = float(np.linalg.norm(f_true))
    mse = float(np.mean(diff * diff))
    peak = float(np.abs(f_true).max(initial=0.0))
    if mse == 0.0:
        psnr = PSNR_CAP_DB
    elif peak == 0.0:
        psnr = -PSNR_CAP_DB
    else:
        psnr = min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)
    if true_norm == 0.0:
        return InstanceMetrics(error=abs_err, psnr_db=psnr, zero_truth=True)
    return InstanceMetrics(error=abs_err / true_norm, psnr_db=psnr)


@dataclass
class MetricsReport:
    """Per-instance metrics plus aggregates for one method."""

    instances: list
    aggregate_rel_l2: float
    mean_psnr_db: float
    coverage: dict = field(default_factory=dict)
    wall_clock_seconds: float = field(default=0.0, compare=False)

    def to_json_dict(self) -> dict:
        doc = {
            "aggregate_rel_l2": self.aggregate_rel_l2,
            "mean_psnr_db": self.mean_psnr_db,
            "instances": [
                {
                    "error": inst.error,
                    "psnr_db": inst.psnr_db,
                    "zero_truth": inst.zero_truth,
                }
                for inst in self.instances
            ],
        }
        if self.coverage:
            doc["coverage"] = {str(k): v for k, v in self.coverage.items()}
        return doc


def aggregate_metrics(f_hats, f_trues) -> MetricsReport:
    f_hats = np.asarray(f_hats, dtype=float)
    f_trues = np.asarray(f_trues, dtype=float)
    if f_hats.shape != f_trues.shape:
        raise DimensionMismatchError(
            f"reconstruction batch {f_hats.shape} != truth batch {f_trues.shape}"
        )
    per_instance = [evaluate(f_hats[i], f_trues[i]) for i in range(f_hats.shape[0])]
    num = float(np.linalg.norm(f_hats - f_trues))
    den = float(np.linalg.norm(f_trues))
    aggregate = num / den if den > 0 else num
    mean_psnr = float(np.mean([inst.psnr_db for inst in per_instance]))
    return MetricsReport(
        instances=per_instance, aggregate_rel_l2=aggregate, mean_psnr_db=mean_psnr
    )


def coverage_test(beliefs, truths, level: float) -> float:
    """Fraction of (instance, component) pairs whose interval contains the truth."""
    beliefs = list(beliefs)
    truths = list(truths)
    if not beliefs or not truths:
        raise ParameterError("coverage needs at least one belief and truth")
    if len(beliefs) != len(truths):
        raise BatchError(f"{len(beliefs)} beliefs vs {len(truths)} truths")
    hits = 0
    total = 0
    for belief, truth in zip(beliefs, truths):
        truth = np.asarray(truth, dtype=float)
        if truth.shape != belief.mean.shape:
            raise DimensionMismatchError(
                f"truth shape {truth.shape} != belief dimension {belief.mean.shape}"
            )
        interval = analytic.credible_interval(belief, level)
        hits += int(np.sum((truth >= interval[:, 0]) & (truth <= interval[:, 1])))
        total += truth.size
    return hits / total


# -- pipeline steps ------------------------------------------------------------


def _outpath(out_dir, *parts):
    path = os.path.join(out_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def cmd_gen(spec: ProblemSpec, out_dir) -> dict:
    """Write train and test datasets plus metadata sidecars."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for which in ("train", "test"):
        dataset = generate_dataset(spec, which)
        path = _outpath(out_dir, f"{which}_dataset.csv")
        write_dataset(dataset, path)
        written[which] = f"{which}_dataset.csv"
    return {"written": written, "spec_hash": spec.spec_hash()}


def _load_split(out_dir, which):
    path = os.path.join(out_dir, f"{which}_dataset.csv")
    if not os.path.exists(path):
        raise MissingFileError(f"missing file: {path} (run `gen` first)")
    return read_dataset(path)


def cmd_analytic(spec: ProblemSpec, out_dir) -> dict:
    """Exact Gaussian posterior per test instance; belief JSON + mean CSV."""
    dataset = _load_split(out_dir, "test")
    op = spec.build_operator()
    if spec.noise_variance <= 0:
        raise ParameterError("analytic inference needs noise_variance > 0")
    noise = NoiseModel(spec.noise_variance)
    prior = spec.gaussian_prior()
    for i in range(dataset.count):
        belief = analytic.posterior_linear_gaussian(
            op, dataset.observations[i], noise, prior
        )
        write_json(_outpath(out_dir, "analytic", f"belief_{i:03d}.json"), belief.to_json_dict())
        write_vector_csv(_outpath(out_dir, "analytic", f"fhat_{i:03d}.csv"), belief.mean)
    return {"instances": dataset.count, "spec_hash": spec.spec_hash()}


def cmd_map(spec: ProblemSpec, out_dir) -> dict:
    """Direct regularized MAP reconstruction per test instance."""
    dataset = _load_split(out_dir, "test")
    op = spec.build_operator()
    reg = spec.build_reg_operator()
    config = spec.map_config()
    for i in range(dataset.count):
        f_map = training.map_estimate_direct(
            dataset.observations[i], op, reg, spec.weights, config
        )
        write_vector_csv(_outpath(out_dir, "map", f"fhat_{i:03d}.csv"), f_map)
    return {"instances": dataset.count, "spec_hash": spec.spec_hash()}


def cmd_train(spec: ProblemSpec, out_dir, mode=None, data_path=None, seed=None) -> dict:
    """Train the surrogate; write model.json, history.csv and a sidecar."""
    mode = mode or spec.mode
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if data_path is None:
        dataset = _load_split(out_dir, "train")
    else:
        dataset = read_dataset(data_path)
    op = spec.build_operator()
    arch = spec.build_architecture()
    config = spec.train_config(seed=seed)
    if mode == "supervised":
        if dataset.truths is None:
            raise BatchError("supervised training needs truths in the dataset")
        params, report = training.train_supervised(
            dataset.observations, dataset.truths, op, spec.prior_mean(), arch, config
        )
    else:
        params, report = training.train_unsupervised(
            dataset.observations, op, spec.build_reg_operator(), arch, config
        )
    network.save_model(params, _outpath(out_dir, "model.json"), init_seed=config.seed)
    report.write_history_csv(_outpath(out_dir, "history.csv"))
    sidecar = {
        "spec_hash": spec.spec_hash(),
        "mode": mode,
        "seed": config.seed,
        "epochs_run": len(report.history),
        "best_epoch": report.best_epoch,
        "stop_reason": report.stop_reason,
        "final_grad_norm": report.final_grad_norm,
        "final_total": report.history[-1].total,
        "model": "model.json",
        "history": "history.csv",
    }
    write_json(_outpath(out_dir, "train_meta.json"), sidecar)
    return sidecar


def cmd_infer(model_path, data_path, out_dir) -> dict:
    """Apply a saved model to every observation in a dataset file."""
    if not os.path.exists(model_path):
        raise MissingFileError(f"missing file: {model_path}")
    params, meta = network.load_model(model_path)
    dataset = read_dataset(data_path)
    if dataset.observations.shape[1] != params.arch.input_size:
        raise DimensionMismatchError(
            f"model expects observations of length {params.arch.input_size}, "
            f"dataset has length {dataset.observations.shape[1]}"
        )
    outs, _ = network.forward_batch(params, dataset.observations)
    for i in range(dataset.count):
        write_vector_csv(_outpath(out_dir, "infer", f"fhat_{i:03d}.csv"), outs[i])
    return {"instances": dataset.count, "model": os.path.basename(str(model_path))}


def _read_method_fhats(out_dir, method, count):
    folder = os.path.join(out_dir, method)
    if not os.path.isdir(folder):
        return None
    vecs = []
    for i in range(count):
        path = os.path.join(folder, f"fhat_{i:03d}.csv")
        if not os.path.exists(path):
            raise MissingFileError(f"missing file: {path}")
        vecs.append(read_vector_csv(path))
    return np.stack(vecs)


def cmd_eval(spec: ProblemSpec, out_dir) -> dict:
    """Compare every produced reconstruction set against the test truths."""
    dataset = _load_split(out_dir, "test")
    if dataset.truths is None:
        raise BatchError("evaluation needs a test dataset with truths")
    summary = {"spec_hash": spec.spec_hash(), "methods": {}}
    for method in ("analytic", "map", "infer"):
        f_hats = _read_method_fhats(out_dir, method, dataset.count)
        if f_hats is None:
            continue
        report = aggregate_metrics(f_hats, dataset.truths)
        if method == "analytic":
            beliefs = [
                GaussianBelief.from_json_dict(
                    read_json(os.path.join(out_dir, "analytic", f"belief_{i:03d}.json"))
                )
                for i in range(dataset.count)
            ]
            report.coverage = {
                str(level): coverage_test(beliefs, dataset.truths, level)
                for level in COVERAGE_LEVELS
            }
        rows = [
            inst.to_csv_row(i) for i, inst in enumerate(report.instances)
        ]
        write_table_csv(_outpath(out_dir, f"metrics_{method}.csv"), METRICS_HEADER, rows)
        summary["methods"][method] = report.to_json_dict()
    if not summary["methods"]:
        raise MissingFileError(
            f"no reconstructions found under {out_dir} (run analytic/map/infer first)"
        )
    write_json(_outpath(out_dir, "metrics.json"), summary)
    return summary


def cmd_report(out_dir) -> dict:
    """Aggregate metrics.json (+ train sidecar, if any) into report files."""
    metrics_path = os.path.join(out_dir, "metrics.json")
    if not os.path.exists(metrics_path):
        raise MissingFileError(f"missing file: {metrics_path} (run `eval` first)")
    summary = read_json(metrics_path)
    report = {"spec_hash": summary.get("spec_hash"), "methods": {}}
    rows = []
    for method in sorted(summary.get("methods", {})):
        doc = summary["methods"][method]
        coverage = doc.get("coverage", {})
        entry = {
            "instances": len(doc.get("instances", [])),
            "aggregate_rel_l2": doc["aggregate_rel_l2"],
            "mean_psnr_db": doc["mean_psnr_db"],
        }
        if coverage:
            entry["coverage"] = coverage
        report["methods"][method] = entry
        rows.append(
            [
                method,
                str(entry["instances"]),
                fmt_float(doc["aggregate_rel_l2"]),
                fmt_float(doc["mean_psnr_db"]),
                fmt_float(coverage["0.5"]) if "0.5" in coverage else "",
                fmt_float(coverage["0.9"]) if "0.9" in coverage else "",
            ]
        )
    train_meta_path = os.path.join(out_dir, "train_meta.json")
    if os.path.exists(train_meta_path):
        report["training"] = read_json(train_meta_path)
    write_table_csv(_outpath(out_dir, "report.csv"), REPORT_HEADER, rows)
    write_json(_outpath(out_dir, "report.json"), report)
    return report
