"""Batch-wise compressed split training, in one process.

The step is cut into the same three pieces the networked session runs:

    edge_forward   -> CompressedBatch      (edge: f_theta, group, bind, superpose)
    cloud_step     -> gradient wrt S^g     (cloud: unbind, f_psi, loss, backprop, Adam)
    edge_backward                          (edge: bind adjoint, backprop, Adam)

``train_step`` glues them together with a simulated wire in between, so a run
here and a run across a socket perform identical floating-point work.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import codec
from .codec import KeySet
from .data import Dataset, FeatureBatch, iterate_batches, load_idx_dataset, make_blobs
from .errors import ContractViolation, InvalidArgument
from .nn import (ForwardCache, Network, SplitModel, cloud_loss, forward_cloud_and_loss,
                 softmax_cross_entropy)

WIRE_DTYPES = {"float32": np.float32, "float64": np.float64}

STEP_FIELDS = ["step", "epoch", "loss", "accuracy", "forward_bytes", "backward_bytes",
               "cumulative_bytes"]


@dataclass
class TrainConfig:
    ratio: int = 1
    batch_size: int = 64
    dim: int = 64
    seed: int = 0
    epochs: int = 1
    lr: float = 1e-4
    dataset: str = "blobs"
    strict_grouping: bool = False
    key_mode: str = "gaussian"  # or "delta"
    edge_hidden: tuple = (128,)
    cloud_hidden: tuple = (128,)
    wire_dtype: str = "float32"
    # blob generator settings, ignored for idx datasets
    num_classes: int = 4
    n_train: int = 2000
    n_test: int = 500
    input_dim: int = 64
    separation: float = 8.0

    def __post_init__(self):
        self.edge_hidden = tuple(self.edge_hidden)
        self.cloud_hidden = tuple(self.cloud_hidden)
        self.validate()

    def validate(self) -> None:
        if self.ratio < 1:
            raise InvalidArgument("compression ratio must be >= 1")
        if self.batch_size < 1 or self.dim < 1 or self.epochs < 0:
            raise InvalidArgument("batch size and dim must be positive, epochs non-negative")
        if self.strict_grouping and self.batch_size % self.ratio:
            raise InvalidArgument(
                f"strict grouping needs batch size {self.batch_size} divisible by R={self.ratio}")
        if self.key_mode not in ("gaussian", "delta"):
            raise InvalidArgument(f"unknown key mode {self.key_mode!r}")
        if self.wire_dtype not in WIRE_DTYPES:
            raise InvalidArgument(f"unknown wire dtype {self.wire_dtype!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["edge_hidden"] = list(self.edge_hidden)
        d["cloud_hidden"] = list(self.cloud_hidden)
        return d


@dataclass
class CompressedBatch:
    group_sizes: list[int]
    data: np.ndarray  # (num_groups, D)

    @property
    def num_groups(self) -> int:
        return len(self.group_sizes)

    @property
    def count(self) -> int:
        return sum(self.group_sizes)

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class EdgeState:
    """What the edge keeps between sending features and receiving gradients."""

    cache: ForwardCache
    group_sizes: list[int]


@dataclass
class CloudResult:
    loss: float
    grad_compressed: np.ndarray  # (num_groups, D)
    logits: np.ndarray


@dataclass
class StepMetrics:
    step: int
    epoch: int
    loss: float
    accuracy: float
    forward_bytes: int
    backward_bytes: int
    cumulative_bytes: int = 0
    wall_ms: float = 0.0


@dataclass
class TrainResult:
    model: SplitModel
    keys: KeySet | None
    steps: list[StepMetrics] = field(default_factory=list)
    final_accuracy: float | None = None


def group_sizes(count: int, r: int, strict: bool = False) -> list[int]:
    if r < 1:
        raise InvalidArgument("group size must be >= 1")
    if count < 1:
        raise InvalidArgument("cannot group an empty batch")
    if strict and count % r:
        raise InvalidArgument(f"batch of {count} is not divisible into groups of {r}")
    full, rest = divmod(count, r)
    return [r] * full + ([rest] if rest else [])


def divide_groups(z: np.ndarray, r: int, strict: bool = False) -> list[np.ndarray]:
    """Consecutive, order-preserving slices of ``r`` rows; the last may be shorter."""
    sizes = group_sizes(len(z), r, strict)
    bounds = np.cumsum([0] + sizes)
    return [z[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def _split_sizes(sizes: list[int]) -> tuple[int, int, int]:
    """(group size r, number of full groups, tail size) for a valid size list."""
    if not sizes or min(sizes) < 1:
        raise InvalidArgument("group sizes must be positive and non-empty")
    r = sizes[0]
    if any(s != r for s in sizes[:-1]) or sizes[-1] > r:
        raise InvalidArgument(f"group sizes {sizes} are not r,...,r,tail")
    if sizes[-1] == r:
        return r, len(sizes), 0
    return r, len(sizes) - 1, sizes[-1]


def _grouped(keys: KeySet, sizes: list[int], rows: np.ndarray, per_group: np.ndarray,
             op, reduce_slots: bool) -> np.ndarray:
    r, nfull, tail = _split_sizes(sizes)
    d = keys.dim
    if reduce_slots:
        out = np.empty((len(sizes), d))
        if nfull:
            out[:nfull] = op(keys.keys[:r], rows[: nfull * r].reshape(nfull, r, d)).sum(axis=1)
        if tail:
            out[nfull] = codec.superpose(op(keys.keys[:tail], rows[nfull * r:]))
    else:
        out = np.empty((sum(sizes), d))
        if nfull:
            out[: nfull * r] = op(keys.keys[:r], per_group[:nfull, None, :]).reshape(nfull * r, d)
        if tail:
            out[nfull * r:] = op(keys.keys[:tail], per_group[nfull])
    return out


def compress(keys: KeySet, z: np.ndarray, sizes: list[int]) -> CompressedBatch:
    """Encode each group of rows of ``z`` into one superposed vector."""
    if sum(sizes) != len(z):
        raise InvalidArgument(f"group sizes cover {sum(sizes)} rows, batch has {len(z)}")
    return CompressedBatch(list(sizes), _grouped(keys, sizes, z, None, codec.bind, True))


def decompress(keys: KeySet, compressed: CompressedBatch) -> np.ndarray:
    """Unbind every slot of every group; rows come back in original sample order."""
    return _grouped(keys, compressed.group_sizes, None, compressed.data, codec.unbind, False)


def decompress_backward(keys: KeySet, sizes: list[int], grad_restored: np.ndarray) -> np.ndarray:
    """Gradient wrt each S^g: the adjoint of unbinding, summed over the group's slots."""
    return _grouped(keys, sizes, grad_restored, None, codec.unbind_adjoint, True)


def compress_backward(keys: KeySet, sizes: list[int], grad_compressed: np.ndarray) -> np.ndarray:
    """Gradient wrt the cut-layer rows: S^g's gradient fans out through bind's adjoint."""
    return _grouped(keys, sizes, None, grad_compressed, codec.bind_adjoint, False)


def to_wire(a: np.ndarray, wire_dtype: str = "float32") -> np.ndarray:
    """Round-trip through the wire precision (what the peer actually sees)."""
    return np.asarray(a).astype(WIRE_DTYPES[wire_dtype]).astype(np.float64)


def check_consistency(model: SplitModel, keys: KeySet, batch: FeatureBatch) -> None:
    if model.cut_dim != keys.dim:
        raise ContractViolation(f"cut width {model.cut_dim} != key dim {keys.dim}")
    if batch.dim != model.edge.in_dim:
        raise ContractViolation(f"batch width {batch.dim} != edge input {model.edge.in_dim}")
    if batch.labels.min() < 0 or batch.labels.max() >= model.num_classes:
        raise ContractViolation(f"labels outside [0, {model.num_classes})")


def edge_forward(edge: Network, keys: KeySet, batch: FeatureBatch, ratio: int,
                 strict: bool = False):
    """f_theta, then batch-wise compression. Returns (CompressedBatch, EdgeState)."""
    if ratio > keys.count:
        raise ContractViolation(f"ratio {ratio} exceeds the {keys.count} available keys")
    if edge.out_dim != keys.dim:
        raise ContractViolation(f"cut width {edge.out_dim} != key dim {keys.dim}")
    sizes = group_sizes(batch.count, ratio, strict)
    z, cache = edge.forward(batch.data)
    return compress(keys, z, sizes), EdgeState(cache, sizes)


def cloud_step(cloud: Network, keys: KeySet, compressed: CompressedBatch,
               labels: np.ndarray) -> CloudResult:
    """Decode, run f_psi, backprop to S^g and update the cloud half."""
    restored = decompress(keys, compressed)
    cp = cloud_loss(cloud, restored, labels)
    grad = decompress_backward(keys, compressed.group_sizes, cp.grad_input)
    cloud.step(cp.param_grads)
    return CloudResult(cp.loss, grad, cp.logits)


def edge_backward(edge: Network, keys: KeySet, state: EdgeState,
                  grad_compressed: np.ndarray) -> None:
    grad_z = compress_backward(keys, state.group_sizes, grad_compressed)
    edge.backward_and_step(state.cache, grad_z)


def batch_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax picks the lowest index on ties
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_step(model: SplitModel, keys: KeySet, batch: FeatureBatch,
               config: TrainConfig) -> StepMetrics:
    """One iteration of compressed split training. Keys are never modified."""
    check_consistency(model, keys, batch)
    # strictness applies to full batches; an epoch's short tail is grouped leniently
    strict = config.strict_grouping and batch.count == config.batch_size
    compressed, state = edge_forward(model.edge, keys, batch, config.ratio, strict)
    sent = CompressedBatch(compressed.group_sizes, to_wire(compressed.data, config.wire_dtype))
    result = cloud_step(model.cloud, keys, sent, batch.labels)
    grad = to_wire(result.grad_compressed, config.wire_dtype)
    edge_backward(model.edge, keys, state, grad)
    nbytes = sent.data.size * np.dtype(config.wire_dtype).itemsize
    return StepMetrics(step=0, epoch=0, loss=result.loss,
                       accuracy=batch_accuracy(result.logits, batch.labels),
                       forward_bytes=nbytes, backward_bytes=nbytes)


def batch_loss(model: SplitModel, keys: KeySet, batch: FeatureBatch, ratio: int) -> float:
    """Loss of the compressed forward path, with no wire rounding and no update."""
    z, _ = model.edge.forward(batch.data)
    restored = decompress(keys, compress(keys, z, group_sizes(batch.count, ratio)))
    logits, _ = model.cloud.forward(restored)
    return softmax_cross_entropy(logits, batch.labels)[0]


def loss_and_gradients(model: SplitModel, keys: KeySet, batch: FeatureBatch, ratio: int):
    """(loss, edge parameter grads, cloud parameter grads) without stepping either half."""
    check_consistency(model, keys, batch)
    sizes = group_sizes(batch.count, ratio)
    z, cache = model.edge.forward(batch.data)
    compressed = compress(keys, z, sizes)
    cp = cloud_loss(model.cloud, decompress(keys, compressed), batch.labels)
    grad_s = decompress_backward(keys, sizes, cp.grad_input)
    _, edge_grads = model.edge.backward(cache, compress_backward(keys, sizes, grad_s))
    return cp.loss, edge_grads, cp.param_grads


def vanilla_train_step(model: SplitModel, batch: FeatureBatch,
                       wire_dtype: str = "float32") -> StepMetrics:
    """Uncompressed split learning: raw cut-layer activations cross the wire."""
    z, cache = model.edge.forward(batch.data)
    cp = forward_cloud_and_loss(model, to_wire(z, wire_dtype), batch.labels)
    model.cloud.step(cp.param_grads)
    model.edge.backward_and_step(cache, to_wire(cp.grad_input, wire_dtype))
    nbytes = z.size * np.dtype(wire_dtype).itemsize
    return StepMetrics(step=0, epoch=0, loss=cp.loss,
                       accuracy=batch_accuracy(cp.logits, batch.labels),
                       forward_bytes=nbytes, backward_bytes=nbytes)


def predict(model: SplitModel, keys: KeySet, x: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Class predictions through the full compressed path, batch by batch in order."""
    preds = []
    for start in range(0, len(x), config.batch_size):
        xb = x[start:start + config.batch_size]
        z, _ = model.edge.forward(xb)
        sizes = group_sizes(len(xb), config.ratio)
        c = compress(keys, z, sizes)
        c.data = to_wire(c.data, config.wire_dtype)
        logits, _ = model.cloud.forward(decompress(keys, c))
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds)


def evaluate(model: SplitModel, keys: KeySet, x: np.ndarray, y: np.ndarray,
             config: TrainConfig) -> float:
    """Accuracy with compression active, as in training."""
    if len(x) == 0:
        raise InvalidArgument("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, keys, x, config) == np.asarray(y)))


def load_dataset(config: TrainConfig) -> Dataset:
    if config.dataset == "blobs":
        return make_blobs(config.num_classes, config.n_train, config.n_test, config.input_dim,
                          config.separation, seed=config.seed)
    if config.dataset.startswith("idx:"):
        return load_idx_dataset(config.dataset[4:])
    raise InvalidArgument(f"unknown dataset spec {config.dataset!r}")


def make_keys(config: TrainConfig) -> KeySet:
    if config.key_mode == "delta":
        return codec.delta_keys(config.dim, config.ratio)
    return codec.generate_keys(config.dim, config.ratio, config.seed)


def make_model(config: TrainConfig, input_dim: int, num_classes: int) -> SplitModel:
    return SplitModel.build(input_dim, config.dim, num_classes, seed=config.seed,
                            edge_hidden=config.edge_hidden, cloud_hidden=config.cloud_hidden,
                            lr=config.lr)


def epoch_batches(dataset: Dataset, config: TrainConfig) -> Iterator[tuple[int, Iterator[FeatureBatch]]]:
    """(epoch, batches) pairs with a seeded shuffle; shared by local and networked runs."""
    rng = np.random.default_rng([config.seed, 2])
    for epoch in range(config.epochs):
        yield epoch, iterate_batches(dataset.x_train, dataset.y_train, config.batch_size, rng)


def train(config: TrainConfig, dataset: Dataset | None = None,
          on_step: Callable[[StepMetrics], None] | None = None,
          codec_free: bool = False) -> TrainResult:
    """Run the full training loop in-process and evaluate on the test split."""
    dataset = dataset if dataset is not None else load_dataset(config)
    model = make_model(config, dataset.input_dim, dataset.num_classes)
    keys = None if codec_free else make_keys(config)
    result = TrainResult(model, keys)
    total = 0
    step = 0
    for epoch, batches in epoch_batches(dataset, config):
        for batch in batches:
            t0 = time.perf_counter()
            if codec_free:
                m = vanilla_train_step(model, batch, config.wire_dtype)
            else:
                m = train_step(model, keys, batch, config)
            total += m.forward_bytes + m.backward_bytes
            m.step, m.epoch, m.cumulative_bytes = step, epoch, total
            m.wall_ms = (time.perf_counter() - t0) * 1e3
            result.steps.append(m)
            if on_step is not None:
                on_step(m)
            step += 1
    if not codec_free:
        result.final_accuracy = evaluate(model, keys, dataset.x_test, dataset.y_test, config)
    return result


def vanilla_bytes(config: TrainConfig, n_train: int) -> int:
    """Feature + gradient bytes the same run would move without compression."""
    itemsize = np.dtype(config.wire_dtype).itemsize
    return 2 * n_train * config.dim * itemsize * config.epochs


def summarize(config: TrainConfig, result: TrainResult, n_train: int) -> dict:
    sent = result.steps[-1].cumulative_bytes if result.steps else 0
    baseline = vanilla_bytes(config, n_train)
    return {
        "config": config.to_dict(),
        "steps": len(result.steps),
        "final_loss": result.steps[-1].loss if result.steps else None,
        "final_accuracy": result.final_accuracy,
        "total_bytes": sent,
        "vanilla_bytes": baseline,
        "compression_ratio": baseline / sent if sent else None,
        "key_params": result.keys.param_count if result.keys is not None else 0,
    }


def write_steps_csv(steps: list[StepMetrics], path, timing: bool = False) -> None:
    """Per-step metrics. Wall-clock time is opt-in so that reruns give identical files."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_FIELDS + (["wall_ms"] if timing else []))
        for m in steps:
            row = [m.step, m.epoch, repr(m.loss), repr(m.accuracy), m.forward_bytes,
                   m.backward_bytes, m.cumulative_bytes]
            writer.writerow(row + ([f"{m.wall_ms:.3f}"] if timing else []))


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

