"""A small numpy MLP split into an edge half and a cloud half.

Each half is a ``Network``: an ordered list of dense layers plus its own Adam
state. Forward passes return an explicit cache; backward passes consume it.
Parameters are float64 in memory and float32 in checkpoints.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InvalidArgument, NumericError

ACTIVATIONS = ("none", "relu")
CHECKPOINT_MAGIC = b"C3MD"
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidArgument(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator):
        """He-uniform weights for relu layers, Glorot-uniform otherwise; zero bias."""
        if activation == "relu":
            limit = np.sqrt(6.0 / in_dim)
        else:
            limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim), activation)

    def forward(self, x: np.ndarray):
        pre = x @ self.weights.T + self.bias
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return out, (x, pre)

    def backward(self, cache, dout: np.ndarray):
        x, pre = cache
        if self.activation == "relu":
            dout = dout * (pre > 0)
        dw = dout.T @ x
        db = dout.sum(axis=0)
        dx = dout @ self.weights
        return dx, dw, db


@dataclass
class Adam:
    """Adam with bias correction. One moment pair per parameter array."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params) or len(params) != len(self.m):
            raise ContractViolation("gradient list does not match optimizer state")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class ForwardCache:
    network_id: int
    version: int
    layer_caches: list
    consumed: bool = False


class Network:
    """An ordered stack of dense layers trained by its own Adam instance."""

    def __init__(self, layers: list[DenseLayer], optimizer: Adam | None = None):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise InvalidArgument(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers
        self.optimizer = optimizer if optimizer is not None else Adam()
        self.version = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InvalidArgument(f"expected input of width {self.in_dim}, got shape {x.shape}")
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, ForwardCache(id(self), self.version, caches)

    def backward(self, cache: ForwardCache, dout: np.ndarray):
        """Returns (grad wrt input, parameter grads in ``parameters()`` order)."""
        if cache.network_id != id(self) or cache.version != self.version or cache.consumed:
            raise ContractViolation("forward cache is stale or belongs to another network")
        cache.consumed = True
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(cache.layer_caches)):
            dout, dw, db = layer.backward(c, dout)
            grads += [db, dw]
        grads.reverse()
        return dout, grads

    def step(self, grads: list[np.ndarray]) -> None:
        self.optimizer.step(self.parameters(), grads)
        self.version += 1

    def backward_and_step(self, cache: ForwardCache, dout: np.ndarray) -> np.ndarray:
        dx, grads = self.backward(cache, dout)
        self.step(grads)
        return dx

    def state_bytes(self) -> bytes:
        return b"".join(p.tobytes() for p in self.parameters())


@dataclass
class CloudPass:
    loss: float
    grad_input: np.ndarray
    logits: np.ndarray
    param_grads: list


def build_network(widths: Sequence[int], rng: np.random.Generator, lr: float = 1e-4,
                  final_activation: str = "none", **adam_kwargs) -> Network:
    """Dense stack over ``widths``; relu on hidden layers, ``final_activation`` on the last."""
    if len(widths) < 2 or min(widths) < 1:
        raise InvalidArgument(f"invalid layer widths {list(widths)}")
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        act = final_activation if i == len(widths) - 2 else "relu"
        layers.append(DenseLayer.init(a, b, act, rng))
    return Network(layers, Adam(lr=lr, **adam_kwargs))


class SplitModel:
    """f_theta (edge) feeding f_psi (cloud) through a cut layer of width ``cut_dim``."""

    def __init__(self, edge: Network, cloud: Network):
        if edge.out_dim != cloud.in_dim:
            raise InvalidArgument(
                f"edge output width {edge.out_dim} != cloud input width {cloud.in_dim}"
            )
        self.edge = edge
        self.cloud = cloud

    @property
    def cut_dim(self) -> int:
        return self.edge.out_dim

    @property
    def num_classes(self) -> int:
        return self.cloud.out_dim

    @classmethod
    def build(cls, input_dim: int, cut_dim: int, num_classes: int, *, seed: int = 0,
              edge_hidden: Sequence[int] = (128,), cloud_hidden: Sequence[int] = (128,),
              lr: float = 1e-4, **adam_kwargs) -> "SplitModel":
        # independent streams so each side can be rebuilt without the other's shape
        edge = build_edge(input_dim, cut_dim, seed=seed, hidden=edge_hidden, lr=lr, **adam_kwargs)
        cloud = build_cloud(cut_dim, num_classes, seed=seed, hidden=cloud_hidden, lr=lr,
                            **adam_kwargs)
        return cls(edge, cloud)


def build_edge(input_dim: int, cut_dim: int, *, seed: int = 0, hidden: Sequence[int] = (128,),
               lr: float = 1e-4, **adam_kwargs) -> Network:
    rng = np.random.default_rng([seed, 0])
    return build_network([input_dim, *hidden, cut_dim], rng, lr=lr, **adam_kwargs)


def build_cloud(cut_dim: int, num_classes: int, *, seed: int = 0, hidden: Sequence[int] = (128,),
                lr: float = 1e-4, **adam_kwargs) -> Network:
    rng = np.random.default_rng([seed, 1])
    return build_network([cut_dim, *hidden, num_classes], rng, lr=lr, **adam_kwargs)


def forward_edge(model: SplitModel, x: np.ndarray):
    """Cut-layer activations Z = f_theta(X), shape (B, cut_dim), and the cache."""
    return model.edge.forward(x)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient wrt the logits."""
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InvalidArgument(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidArgument(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - shifted[rows, labels]))
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def forward_cloud_and_loss(model: SplitModel, restored: np.ndarray, labels) -> CloudPass:
    """Run f_psi on restored features and backpropagate the loss to its input.

    Cloud parameters are not updated here; pass ``param_grads`` to
    ``model.cloud.step`` to apply them.
    """
    return cloud_loss(model.cloud, restored, labels)


def cloud_loss(cloud: Network, restored: np.ndarray, labels) -> CloudPass:
    restored = np.asarray(restored, dtype=np.float64)
    if not np.all(np.isfinite(restored)):
        raise NumericError("non-finite activations reached the cloud")
    logits, cache = cloud.forward(restored)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss}")
    dx, grads = cloud.backward(cache, dlogits)
    return CloudPass(loss, dx, logits, grads)


def backward_and_step(network: Network, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Backpropagate ``upstream`` through ``network``, take one Adam step, return dX."""
    return network.backward_and_step(cache, upstream)


_CKPT_HEADER = struct.Struct("<4sHH")
_CKPT_LAYER = struct.Struct("<IIB")


def save_checkpoint(layers: Sequence[DenseLayer], path) -> None:
    parts = [_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(layers))]
    for layer in layers:
        parts.append(_CKPT_LAYER.pack(layer.in_dim, layer.out_dim,
                                      ACTIVATIONS.index(layer.activation)))
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> list[DenseLayer]:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise InvalidArgument("checkpoint truncated")
    magic, version, count = _CKPT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"not a version-{CHECKPOINT_VERSION} checkpoint")
    pos = _CKPT_HEADER.size
    layers = []
    for _ in range(count):
        if pos + _CKPT_LAYER.size > len(data):
            raise InvalidArgument("checkpoint truncated")
        in_dim, out_dim, act = _CKPT_LAYER.unpack_from(data, pos)
        pos += _CKPT_LAYER.size
        n = in_dim * out_dim + out_dim
        if act >= len(ACTIVATIONS) or pos + 4 * n > len(data):
            raise InvalidArgument("corrupt checkpoint layer record")
        vals = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64)
        pos += 4 * n
        layers.append(DenseLayer(vals[: in_dim * out_dim].reshape(out_dim, in_dim),
                                 vals[in_dim * out_dim:], ACTIVATIONS[act]))
    if pos != len(data):
        raise InvalidArgument("trailing bytes after checkpoint")
    return layers
