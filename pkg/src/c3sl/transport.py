"""Edge/cloud split training over a byte stream.

Frame layout (little-endian)::

    magic "C3SL" | version u16 | msg_type u8 | payload_len u32 | payload

Payloads:

    CONFIG      version u16, flags u16, D u32, R u16, reserved u16, B u32,
                key_seed u64, num_classes u32, model digest 32 bytes
    CONFIG_ACK  empty
    FEATURES    batch_id u64, num_groups u32, group_sizes u32[num_groups],
                compressed f32[num_groups * D], labels u32[B]
    GRADIENTS   batch_id u64, grad f32[num_groups * D], loss f64
    EPOCH_END   epoch u32
    SHUTDOWN    empty
    ERROR       code u16, utf-8 message

Conversation: CONFIG CONFIG_ACK (FEATURES GRADIENTS | EPOCH_END)* SHUTDOWN.
ERROR may be sent by either side at any point and ends the session. The edge
ships the key seed, never the keys; both sides regenerate the same KeySet.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import struct
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from . import codec, pipeline
from .codec import KeySet
from .data import Dataset, FeatureBatch
from .errors import InvalidArgument, NumericError, ProtocolError
from .nn import Network, build_cloud, build_edge
from .pipeline import CompressedBatch, StepMetrics, TrainConfig

PROTOCOL_VERSION = 1
MAGIC = b"C3SL"
HEADER = struct.Struct("<4sHBI")
DEFAULT_MAX_FRAME = 64 * 1024 * 1024

FLAG_DELTA_KEYS = 0x0001

_CONFIG = struct.Struct("<HHIHHIQI32s")
_FEATURES_HEAD = struct.Struct("<QI")
_BATCH_ID = struct.Struct("<Q")
_LOSS = struct.Struct("<d")
_EPOCH = struct.Struct("<I")
_ERROR_HEAD = struct.Struct("<H")


class MsgType(IntEnum):
    CONFIG = 1
    CONFIG_ACK = 2
    FEATURES = 3
    GRADIENTS = 4
    EPOCH_END = 5
    SHUTDOWN = 6
    ERROR = 7


class ErrorCode(IntEnum):
    VERSION = 1
    CONFIG = 2
    PROTOCOL = 3
    NUMERIC = 4
    INTERNAL = 5


class RemoteError(ProtocolError):
    """The peer answered with an ERROR frame."""

    def __init__(self, code: int, message: str):
        super().__init__(f"peer error {code}: {message}", code=code)


def max_frame_size() -> int:
    value = os.environ.get("C3SL_MAX_FRAME")
    return int(value) if value else DEFAULT_MAX_FRAME


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes = b""
    version: int = PROTOCOL_VERSION


def frame(msg: WireMessage) -> bytes:
    return HEADER.pack(MAGIC, msg.version, int(msg.msg_type), len(msg.payload)) + msg.payload


def deframe(buf: bytes | bytearray | memoryview, *, max_payload: int | None = None,
            expected_version: int | None = PROTOCOL_VERSION) -> tuple[WireMessage | None, int]:
    """Parse one frame from the front of ``buf``.

    Returns ``(message, bytes_consumed)``, or ``(None, 0)`` when ``buf`` holds
    only a prefix of a valid frame. Anything that can never become a valid
    frame raises ProtocolError.
    """
    buf = memoryview(buf)
    head = bytes(buf[:4])
    if head != MAGIC[: len(head)]:
        raise ProtocolError(f"bad magic {head!r}")
    if len(buf) < HEADER.size:
        return None, 0
    _, version, msg_type, length = HEADER.unpack_from(buf)
    if expected_version is not None and version != expected_version:
        raise ProtocolError(f"unsupported protocol version {version}", code=ErrorCode.VERSION)
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    limit = max_frame_size() if max_payload is None else max_payload
    if length > limit:
        raise ProtocolError(f"payload of {length} bytes exceeds the {limit}-byte cap")
    end = HEADER.size + length
    if len(buf) < end:
        return None, 0
    return WireMessage(msg_type, bytes(buf[HEADER.size:end]), version), end


class Deframer:
    """Accumulates stream bytes and yields complete messages."""

    def __init__(self, max_payload: int | None = None):
        self._buf = bytearray()
        self.max_payload = max_payload
        self.expected_version: int | None = PROTOCOL_VERSION

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf += data
        out = []
        while self._buf:
            msg, used = deframe(self._buf, max_payload=self.max_payload,
                                expected_version=self.expected_version)
            if msg is None:
                break
            del self._buf[:used]
            out.append(msg)
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------- payloads

@dataclass(frozen=True)
class ConfigPayload:
    dim: int
    ratio: int
    batch_size: int
    key_seed: int
    num_classes: int
    digest: bytes
    delta_keys: bool = False
    version: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        if len(self.digest) != 32:
            raise InvalidArgument("model digest must be 32 bytes")
        flags = FLAG_DELTA_KEYS if self.delta_keys else 0
        return _CONFIG.pack(self.version, flags, self.dim, self.ratio, 0, self.batch_size,
                            self.key_seed, self.num_classes, self.digest)

    @classmethod
    def decode(cls, payload: bytes) -> "ConfigPayload":
        if len(payload) != _CONFIG.size:
            raise ProtocolError(f"CONFIG payload must be {_CONFIG.size} bytes, got {len(payload)}")
        version, flags, dim, ratio, _, batch, seed, classes, digest = _CONFIG.unpack(payload)
        return cls(dim, ratio, batch, seed, classes, digest, bool(flags & FLAG_DELTA_KEYS),
                   version)

    def keys(self) -> KeySet:
        if self.delta_keys:
            return codec.delta_keys(self.dim, self.ratio)
        return codec.generate_keys(self.dim, self.ratio, self.key_seed)


@dataclass(frozen=True)
class FeaturesPayload:
    batch_id: int
    group_sizes: tuple[int, ...]
    data: np.ndarray  # (num_groups, D) float32
    labels: np.ndarray  # (B,) uint32

    def encode(self) -> bytes:
        g = len(self.group_sizes)
        data = np.ascontiguousarray(self.data, dtype="<f4")
        if data.ndim != 2 or data.shape[0] != g:
            raise InvalidArgument("compressed data must have one row per group")
        labels = np.ascontiguousarray(self.labels, dtype="<u4")
        if labels.shape != (sum(self.group_sizes),):
            raise InvalidArgument("one label per sample is required")
        return b"".join([
            _FEATURES_HEAD.pack(self.batch_id, g),
            np.asarray(self.group_sizes, dtype="<u4").tobytes(),
            data.tobytes(),
            labels.tobytes(),
        ])

    @classmethod
    def decode(cls, payload: bytes, dim: int) -> "FeaturesPayload":
        if len(payload) < _FEATURES_HEAD.size:
            raise ProtocolError("FEATURES payload truncated")
        batch_id, g = _FEATURES_HEAD.unpack_from(payload)
        pos = _FEATURES_HEAD.size
        if len(payload) < pos + 4 * g:
            raise ProtocolError("FEATURES group table truncated")
        sizes = np.frombuffer(payload, dtype="<u4", count=g, offset=pos)
        pos += 4 * g
        b = int(sizes.sum())
        if len(payload) != pos + 4 * g * dim + 4 * b:
            raise ProtocolError(
                f"FEATURES payload is {len(payload)} bytes, layout needs {pos + 4 * g * dim + 4 * b}")
        data = np.frombuffer(payload, dtype="<f4", count=g * dim, offset=pos).reshape(g, dim)
        pos += 4 * g * dim
        labels = np.frombuffer(payload, dtype="<u4", count=b, offset=pos)
        return cls(batch_id, tuple(int(s) for s in sizes), data, labels)


def features_payload_size(batch_size: int, ratio: int, dim: int) -> int:
    groups = -(-batch_size // ratio)
    return _FEATURES_HEAD.size + 4 * groups + 4 * groups * dim + 4 * batch_size


@dataclass(frozen=True)
class GradientsPayload:
    batch_id: int
    data: np.ndarray  # (num_groups, D) float32
    loss: float

    def encode(self) -> bytes:
        return (_BATCH_ID.pack(self.batch_id)
                + np.ascontiguousarray(self.data, dtype="<f4").tobytes()
                + _LOSS.pack(self.loss))

    @classmethod
    def decode(cls, payload: bytes, num_groups: int, dim: int) -> "GradientsPayload":
        expected = _BATCH_ID.size + 4 * num_groups * dim + _LOSS.size
        if len(payload) != expected:
            raise ProtocolError(f"GRADIENTS payload is {len(payload)} bytes, expected {expected}")
        (batch_id,) = _BATCH_ID.unpack_from(payload)
        data = np.frombuffer(payload, dtype="<f4", count=num_groups * dim,
                             offset=_BATCH_ID.size).reshape(num_groups, dim)
        (loss,) = _LOSS.unpack_from(payload, expected - _LOSS.size)
        return cls(batch_id, data, loss)


def encode_error(code: int, message: str) -> bytes:
    return _ERROR_HEAD.pack(int(code)) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < _ERROR_HEAD.size:
        raise ProtocolError("ERROR payload truncated")
    (code,) = _ERROR_HEAD.unpack_from(payload)
    return code, payload[_ERROR_HEAD.size:].decode("utf-8", errors="replace")


def encode_epoch(epoch: int) -> bytes:
    return _EPOCH.pack(epoch)


def decode_epoch(payload: bytes) -> int:
    if len(payload) != _EPOCH.size:
        raise ProtocolError("EPOCH_END payload must be 4 bytes")
    return _EPOCH.unpack(payload)[0]


# ---------------------------------------------------------------- session

_EDGE_TRANSITIONS = {
    ("awaiting_config", "send", MsgType.CONFIG): "handshaking",
    ("handshaking", "recv", MsgType.CONFIG_ACK): "ready",
    ("ready", "send", MsgType.FEATURES): "awaiting_gradients",
    ("awaiting_gradients", "recv", MsgType.GRADIENTS): "ready",
    ("ready", "send", MsgType.EPOCH_END): "ready",
    ("ready", "send", MsgType.SHUTDOWN): "closed",
}

_CLOUD_TRANSITIONS = {
    ("awaiting_config", "recv", MsgType.CONFIG): "ready",
    ("ready", "send", MsgType.CONFIG_ACK): "awaiting_features",
    ("awaiting_features", "recv", MsgType.FEATURES): "computing",
    ("computing", "send", MsgType.GRADIENTS): "awaiting_features",
    ("awaiting_features", "recv", MsgType.EPOCH_END): "awaiting_features",
    ("awaiting_features", "recv", MsgType.SHUTDOWN): "closed",
}


@dataclass
class SessionState:
    """Protocol state machine for one end of a session."""

    role: str  # "edge" | "cloud"
    phase: str = "awaiting_config"
    negotiated: ConfigPayload | None = None
    next_batch_id: int = 0
    in_flight: int | None = None

    def __post_init__(self):
        if self.role not in ("edge", "cloud"):
            raise InvalidArgument(f"unknown role {self.role!r}")

    def _advance(self, direction: str, msg_type: MsgType) -> None:
        if self.phase == "closed":
            raise ProtocolError(f"{direction} {msg_type.name} after session closed")
        if msg_type == MsgType.ERROR:
            self.phase = "closed"
            return
        table = _EDGE_TRANSITIONS if self.role == "edge" else _CLOUD_TRANSITIONS
        nxt = table.get((self.phase, direction, msg_type))
        if nxt is None:
            raise ProtocolError(
                f"{self.role} cannot {direction} {msg_type.name} in phase {self.phase}")
        self.phase = nxt

    def _check_batch(self, direction: str, msg_type: MsgType, batch_id: int | None) -> None:
        if msg_type == MsgType.FEATURES:
            if batch_id != self.next_batch_id:
                raise ProtocolError(f"expected batch {self.next_batch_id}, got {batch_id}")
        elif msg_type == MsgType.GRADIENTS:
            if batch_id != self.in_flight:
                raise ProtocolError(f"gradients for batch {batch_id}, in flight: {self.in_flight}")

    def _commit_batch(self, msg_type: MsgType, batch_id: int | None) -> None:
        if msg_type == MsgType.FEATURES:
            self.in_flight = batch_id
            self.next_batch_id += 1
        elif msg_type == MsgType.GRADIENTS:
            self.in_flight = None

    def on_send(self, msg_type: MsgType, batch_id: int | None = None) -> None:
        self._check_batch("send", msg_type, batch_id)
        self._advance("send", MsgType(msg_type))
        self._commit_batch(msg_type, batch_id)

    def on_receive(self, msg_type: MsgType, batch_id: int | None = None) -> None:
        self._check_batch("recv", msg_type, batch_id)
        self._advance("recv", MsgType(msg_type))
        self._commit_batch(msg_type, batch_id)


# ---------------------------------------------------------------- connection

class Connection:
    """Framed messages over a connected stream socket, with byte accounting."""

    def __init__(self, sock: socket.socket, max_payload: int | None = None):
        self.sock = sock
        self.deframer = Deframer(max_payload)
        self._queue: list[WireMessage] = []
        self.bytes_sent = 0
        self.bytes_received = 0
        self.sent_by_type: Counter = Counter()
        self.received_by_type: Counter = Counter()

    def send(self, msg: WireMessage) -> None:
        data = frame(msg)
        self.sock.sendall(data)
        self.bytes_sent += len(data)
        self.sent_by_type[msg.msg_type] += len(data)

    def recv(self) -> WireMessage:
        while not self._queue:
            chunk = self.sock.recv(1 << 16)
            if not chunk:
                raise ConnectionError("peer closed the connection")
            self._queue.extend(self.deframer.feed(chunk))
        msg = self._queue.pop(0)
        n = HEADER.size + len(msg.payload)
        self.bytes_received += n
        self.received_by_type[msg.msg_type] += n
        return msg

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def model_digest(dim: int, num_classes: int, hidden: Sequence[int], seed: int, lr: float) -> bytes:
    """Digest of everything both sides must agree on to build the same cloud half."""
    desc = {"dim": dim, "num_classes": num_classes, "cloud_hidden": list(hidden),
            "seed": seed, "lr": lr}
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).digest()


@dataclass
class CloudSpec:
    """What the cloud process is configured with, independently of the edge."""

    dim: int
    num_classes: int
    hidden: tuple = (128,)
    seed: int = 0
    lr: float = 1e-4
    version: int = PROTOCOL_VERSION

    def digest(self) -> bytes:
        return model_digest(self.dim, self.num_classes, self.hidden, self.seed, self.lr)

    @classmethod
    def from_train_config(cls, config: TrainConfig, num_classes: int) -> "CloudSpec":
        return cls(config.dim, num_classes, tuple(config.cloud_hidden), config.seed, config.lr)


def config_payload(config: TrainConfig, num_classes: int,
                   version: int = PROTOCOL_VERSION) -> ConfigPayload:
    spec = CloudSpec.from_train_config(config, num_classes)
    return ConfigPayload(config.dim, config.ratio, config.batch_size, config.seed, num_classes,
                         spec.digest(), config.key_mode == "delta", version)


def edge_handshake(conn: Connection, state: SessionState, hello: ConfigPayload) -> KeySet:
    """Send CONFIG, wait for CONFIG_ACK, return the agreed keys."""
    state.on_send(MsgType.CONFIG)
    conn.send(WireMessage(MsgType.CONFIG, hello.encode(), hello.version))
    # the reply may carry a different version if the cloud rejects ours
    conn.deframer.expected_version = None
    reply = conn.recv()
    conn.deframer.expected_version = hello.version
    if reply.msg_type == MsgType.ERROR:
        state.on_receive(MsgType.ERROR)
        raise RemoteError(*decode_error(reply.payload))
    state.on_receive(reply.msg_type)
    state.negotiated = hello
    return hello.keys()


def _reject(conn: Connection, state: SessionState, code: ErrorCode, message: str,
            version: int) -> ProtocolError:
    """Send ERROR (best effort) and return the exception to raise locally."""
    if state.phase != "closed":
        state.on_send(MsgType.ERROR)
        try:
            conn.send(WireMessage(MsgType.ERROR, encode_error(code, message), version))
        except OSError:
            pass
    return ProtocolError(message, code=int(code))


def cloud_handshake(conn: Connection, state: SessionState, spec: CloudSpec) -> tuple[ConfigPayload, KeySet]:
    conn.deframer.expected_version = None
    msg = conn.recv()
    conn.deframer.expected_version = spec.version
    if msg.version != spec.version:
        raise _reject(conn, state, ErrorCode.VERSION,
                      f"protocol version {msg.version} not supported (cloud speaks {spec.version})",
                      spec.version)
    state.on_receive(msg.msg_type)
    hello = ConfigPayload.decode(msg.payload)
    if hello.version != spec.version:
        raise _reject(conn, state, ErrorCode.VERSION,
                      f"CONFIG version {hello.version} != {spec.version}", spec.version)
    problems = []
    if hello.dim != spec.dim:
        problems.append(f"dim {hello.dim} != {spec.dim}")
    if hello.num_classes != spec.num_classes:
        problems.append(f"num_classes {hello.num_classes} != {spec.num_classes}")
    if hello.digest != spec.digest():
        problems.append("model digest mismatch")
    if hello.ratio < 1 or hello.batch_size < 1 or (hello.delta_keys and hello.ratio > hello.dim):
        problems.append(f"invalid ratio/batch size {hello.ratio}/{hello.batch_size}")
    if problems:
        raise _reject(conn, state, ErrorCode.CONFIG, "; ".join(problems), spec.version)
    state.on_send(MsgType.CONFIG_ACK)
    conn.send(WireMessage(MsgType.CONFIG_ACK, b"", spec.version))
    state.negotiated = hello
    return hello, hello.keys()


# ---------------------------------------------------------------- run loops

@dataclass
class EdgeRunResult:
    edge: Network
    keys: KeySet
    steps: list[StepMetrics] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    features_bytes: int = 0
    gradients_bytes: int = 0


@dataclass
class CloudRunResult:
    cloud: Network
    keys: KeySet | None
    losses: list[float] = field(default_factory=list)
    epochs: int = 0


def run_edge(config: TrainConfig, conn: Connection, dataset: Dataset | None = None,
             on_step: Callable[[StepMetrics], None] | None = None,
             version: int = PROTOCOL_VERSION) -> EdgeRunResult:
    """Edge side of a networked run: owns the data and f_theta."""
    dataset = dataset if dataset is not None else pipeline.load_dataset(config)
    edge = build_edge(dataset.input_dim, config.dim, seed=config.seed,
                      hidden=config.edge_hidden, lr=config.lr)
    state = SessionState("edge")
    keys = edge_handshake(conn, state, config_payload(config, dataset.num_classes, version))
    result = EdgeRunResult(edge, keys)
    total = 0
    batch_id = 0
    try:
        for epoch, batches in pipeline.epoch_batches(dataset, config):
            for batch in batches:
                m = _edge_batch(conn, state, edge, keys, config, batch, batch_id, version)
                total += m.forward_bytes + m.backward_bytes
                m.step, m.epoch, m.cumulative_bytes = batch_id, epoch, total
                result.steps.append(m)
                if on_step is not None:
                    on_step(m)
                batch_id += 1
            state.on_send(MsgType.EPOCH_END)
            conn.send(WireMessage(MsgType.EPOCH_END, encode_epoch(epoch), version))
        state.on_send(MsgType.SHUTDOWN)
        conn.send(WireMessage(MsgType.SHUTDOWN, b"", version))
    finally:
        result.bytes_sent = conn.bytes_sent
        result.bytes_received = conn.bytes_received
        result.features_bytes = conn.sent_by_type[MsgType.FEATURES]
        result.gradients_bytes = conn.received_by_type[MsgType.GRADIENTS]
    return result


def _edge_batch(conn: Connection, state: SessionState, edge: Network, keys: KeySet,
                config: TrainConfig, batch: FeatureBatch, batch_id: int,
                version: int) -> StepMetrics:
    t0 = time.perf_counter()
    strict = config.strict_grouping and batch.count == config.batch_size
    compressed, est = pipeline.edge_forward(edge, keys, batch, config.ratio, strict)
    payload = FeaturesPayload(batch_id, tuple(compressed.group_sizes),
                              compressed.data.astype(np.float32), batch.labels).encode()
    state.on_send(MsgType.FEATURES, batch_id)
    conn.send(WireMessage(MsgType.FEATURES, payload, version))
    reply = conn.recv()
    if reply.msg_type == MsgType.ERROR:
        state.on_receive(MsgType.ERROR)
        code, text = decode_error(reply.payload)
        if code == ErrorCode.NUMERIC:
            raise NumericError(f"cloud reported: {text}")
        raise RemoteError(code, text)
    if reply.msg_type != MsgType.GRADIENTS:
        state.on_receive(reply.msg_type)  # raises
    grads = GradientsPayload.decode(reply.payload, compressed.num_groups, keys.dim)
    state.on_receive(MsgType.GRADIENTS, grads.batch_id)
    pipeline.edge_backward(edge, keys, est, grads.data.astype(np.float64))
    block = 4 * compressed.data.size
    return StepMetrics(0, 0, grads.loss, float("nan"), block, block,
                       wall_ms=(time.perf_counter() - t0) * 1e3)


def run_cloud(conn: Connection, spec: CloudSpec,
              on_loss: Callable[[int, float], None] | None = None) -> CloudRunResult:
    """Cloud side of a session: owns f_psi; returns when the edge shuts down.

    Protocol and numeric failures are reported to the edge with an ERROR
    frame before being raised here.
    """
    cloud = build_cloud(spec.dim, spec.num_classes, seed=spec.seed, hidden=spec.hidden,
                        lr=spec.lr)
    state = SessionState("cloud")
    result = CloudRunResult(cloud, None)
    try:
        hello, keys = cloud_handshake(conn, state, spec)
        result.keys = keys
        while True:
            msg = conn.recv()
            if msg.msg_type == MsgType.ERROR:
                state.on_receive(MsgType.ERROR)
                raise RemoteError(*decode_error(msg.payload))
            if msg.msg_type != MsgType.FEATURES:
                state.on_receive(msg.msg_type)
                if msg.msg_type == MsgType.EPOCH_END:
                    decode_epoch(msg.payload)
                    result.epochs += 1
                elif msg.msg_type == MsgType.SHUTDOWN:
                    return result
                continue
            feats = FeaturesPayload.decode(msg.payload, spec.dim)
            state.on_receive(MsgType.FEATURES, feats.batch_id)
            _check_batch_layout(feats, hello.ratio, spec.num_classes)
            compressed = CompressedBatch(list(feats.group_sizes), feats.data.astype(np.float64))
            out = pipeline.cloud_step(cloud, keys, compressed, feats.labels.astype(np.int64))
            result.losses.append(out.loss)
            if on_loss is not None:
                on_loss(feats.batch_id, out.loss)
            reply = GradientsPayload(feats.batch_id, out.grad_compressed.astype(np.float32),
                                     out.loss)
            state.on_send(MsgType.GRADIENTS, feats.batch_id)
            conn.send(WireMessage(MsgType.GRADIENTS, reply.encode(), spec.version))
    except RemoteError:
        raise
    except NumericError as exc:
        _reject(conn, state, ErrorCode.NUMERIC, str(exc), spec.version)
        raise
    except ProtocolError as exc:
        code = exc.code if exc.code in (ErrorCode.VERSION, ErrorCode.CONFIG) else ErrorCode.PROTOCOL
        _reject(conn, state, code, str(exc), spec.version)
        raise


def _check_batch_layout(feats: FeaturesPayload, ratio: int, num_classes: int) -> None:
    sizes = feats.group_sizes
    if not sizes or any(s != ratio for s in sizes[:-1]) or not 1 <= sizes[-1] <= ratio:
        raise ProtocolError(f"group sizes {list(sizes)} inconsistent with R={ratio}")
    if feats.labels.size and int(feats.labels.max()) >= num_classes:
        raise ProtocolError(f"label {int(feats.labels.max())} outside [0, {num_classes})")


# ---------------------------------------------------------------- sockets

def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise InvalidArgument(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def connect(addr: str, timeout: float | None = None) -> Connection:
    sock = socket.create_connection(parse_address(addr), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Connection(sock)


def listen(addr: str) -> socket.socket:
    srv = socket.create_server(parse_address(addr), reuse_port=False)
    return srv
