"""Circular-convolution binding, superposition and correlation unbinding.

Conventions (D = vector length, indices mod D):

    bind(K, Z)_j   = sum_k K_k * Z_{j-k}      (circular convolution)
    unbind(K, S)_j = sum_k K_k * S_{j+k}      (circular correlation)

With these, unbinding is the exact adjoint of binding, so the backward pass of
either operator is the other one. Every function works on the last axis and
broadcasts over leading axes, so a whole group of keys/features can be bound
in one call.

Computation runs in float64 regardless of input precision. If every input is
float32 the result is cast back to float32; anything else returns float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import C3SLError, InvalidArgument

__all__ = [
    "KeySet",
    "bind",
    "bind_adjoint",
    "decode_group",
    "delta_keys",
    "encode_group",
    "generate_keys",
    "noise_decomposition",
    "read_key_file",
    "superpose",
    "unbind",
    "unbind_adjoint",
    "write_key_file",
]

KEY_FILE_MAGIC = b"C3KS"
KEY_FILE_VERSION = 1
_KEY_HEADER = struct.Struct("<4sHHIHHQ")  # magic, version, rsvd, D, R, rsvd, seed


@dataclass(frozen=True, eq=False)
class KeySet:
    """R fixed unit-norm binding keys of length D.

    ``keys`` is a read-only float64 array of shape ``(count, dim)``. Nothing in
    the package writes to it or computes a gradient for it.
    """

    dim: int
    count: int
    seed: int
    keys: np.ndarray = field(repr=False)

    def __post_init__(self):
        keys = np.array(self.keys, dtype=np.float64, order="C")
        if keys.shape != (self.count, self.dim):
            raise InvalidArgument(
                f"keys shape {keys.shape} does not match ({self.count}, {self.dim})"
            )
        keys.flags.writeable = False
        object.__setattr__(self, "keys", keys)

    @property
    def param_count(self) -> int:
        return self.count * self.dim

    def as_float32(self) -> np.ndarray:
        return self.keys.astype(np.float32)

    def __getitem__(self, i):
        return self.keys[i]

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other):
        if not isinstance(other, KeySet):
            return NotImplemented
        return (
            (self.dim, self.count, self.seed) == (other.dim, other.count, other.seed)
            and self.keys.tobytes() == other.keys.tobytes()
        )

    def __hash__(self):
        return hash((self.dim, self.count, self.seed, self.keys.tobytes()))


def generate_keys(dim: int, count: int, seed: int) -> KeySet:
    """Draw ``count`` keys i.i.d. from N(0, 1/dim) and rescale each to unit norm."""
    if dim < 1 or count < 1:
        raise InvalidArgument(f"dim and count must be positive, got dim={dim} count={count}")
    if not 0 <= seed < 2**64:
        raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {seed}")
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, np.sqrt(1.0 / dim), size=(count, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise C3SLError("sampled an all-zero key; refusing to normalize")
    return KeySet(dim=dim, count=count, seed=seed, keys=raw / norms)


def delta_keys(dim: int, count: int) -> KeySet:
    """Coordinate-delta keys: key i is 1 at index i and 0 elsewhere.

    Binding with these is an exact circular shift, which makes the codec an
    exact identity at count=1. Used for debugging and for reproducing vanilla
    split learning.
    """
    if dim < 1 or count < 1:
        raise InvalidArgument(f"dim and count must be positive, got dim={dim} count={count}")
    if count > dim:
        raise InvalidArgument("delta keys need count <= dim")
    return KeySet(dim=dim, count=count, seed=0, keys=np.eye(count, dim))


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim == 0 or b.ndim == 0:
        raise InvalidArgument("bind/unbind operands must be at least 1-D")
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgument(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    try:
        np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    except ValueError as exc:
        raise InvalidArgument(str(exc)) from None


def _out_dtype(*arrays: np.ndarray):
    if all(a.dtype == np.float32 for a in arrays):
        return np.float32
    return np.float64


def _delta_shifts(key: np.ndarray):
    """Shift amounts if every row of ``key`` is an exact unit delta, else None."""
    rows = key.reshape(-1, key.shape[-1])
    hot = rows == 1.0
    if np.count_nonzero(rows) != rows.shape[0] or not np.all(hot.sum(axis=1) == 1):
        return None
    return np.argmax(hot, axis=1).reshape(key.shape[:-1])


def _shift(z: np.ndarray, shifts: np.ndarray, sign: int) -> np.ndarray:
    # out[..., j] = z[..., (j - sign * m) mod D]
    d = z.shape[-1]
    idx = (np.arange(d) - sign * shifts[..., None]) % d
    shape = np.broadcast_shapes(idx.shape, z.shape)
    return np.take_along_axis(np.broadcast_to(z, shape), np.broadcast_to(idx, shape), axis=-1)


def _circular(key, x, correlate: bool) -> np.ndarray:
    key = np.asarray(key)
    x = np.asarray(x)
    _check_pair(key, x)
    dtype = _out_dtype(key, x)
    k64 = key.astype(np.float64, copy=False)
    x64 = x.astype(np.float64, copy=False)
    shifts = _delta_shifts(k64)
    if shifts is not None:
        out = _shift(x64, shifts, -1 if correlate else 1)
    else:
        d = x.shape[-1]
        fk = np.fft.rfft(k64, axis=-1)
        if correlate:
            fk = np.conj(fk)
        out = np.fft.irfft(fk * np.fft.rfft(x64, axis=-1), n=d, axis=-1)
    return out.astype(dtype, copy=False)


def bind(key, z) -> np.ndarray:
    """Circular convolution of ``key`` with ``z`` (bilinear, commutative)."""
    return _circular(key, z, correlate=False)


def unbind(key, s) -> np.ndarray:
    """Circular correlation of ``key`` with ``s``; the approximate inverse of bind."""
    return _circular(key, s, correlate=True)


def bind_adjoint(key, upstream) -> np.ndarray:
    """Gradient of <upstream, bind(key, z)> with respect to z."""
    return unbind(key, upstream)


def unbind_adjoint(key, upstream) -> np.ndarray:
    """Gradient of <upstream, unbind(key, s)> with respect to s."""
    return bind(key, upstream)


def superpose(bound: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Elementwise sum of bound vectors."""
    if isinstance(bound, np.ndarray):
        if bound.ndim != 2:
            raise InvalidArgument("superpose expects a (n, D) array or a list of vectors")
        stack = bound
    else:
        if len(bound) == 0:
            raise InvalidArgument("cannot superpose an empty list")
        dims = {np.shape(v) for v in bound}
        if len(dims) != 1:
            raise InvalidArgument(f"mixed shapes in superposition: {sorted(dims)}")
        stack = np.stack([np.asarray(v) for v in bound])
    if stack.shape[0] == 0:
        raise InvalidArgument("cannot superpose an empty list")
    return stack.sum(axis=0)


def _as_group(keys: KeySet, group) -> np.ndarray:
    g = np.asarray(group)
    if g.ndim == 1:
        g = g[None, :]
    if g.ndim != 2 or g.shape[0] == 0:
        raise InvalidArgument("group must be a non-empty (n, D) array or list of vectors")
    if g.shape[1] != keys.dim:
        raise InvalidArgument(f"feature dim {g.shape[1]} does not match key dim {keys.dim}")
    if g.shape[0] > keys.count:
        raise InvalidArgument(f"group of {g.shape[0]} exceeds the {keys.count} available keys")
    return g


def encode_group(keys: KeySet, group) -> np.ndarray:
    """Bind the i-th member with the i-th key and sum: one D-vector per group.

    A group shorter than ``keys.count`` uses the leading keys.
    """
    g = _as_group(keys, group)
    return superpose(bind(keys.keys[: g.shape[0]], g))


def decode_group(keys: KeySet, s, size: int) -> np.ndarray:
    """Recover ``size`` noisy features from one compressed vector, shape (size, D)."""
    s = np.asarray(s)
    if s.shape != (keys.dim,):
        raise InvalidArgument(f"compressed vector must have shape ({keys.dim},), got {s.shape}")
    if not 1 <= size <= keys.count:
        raise InvalidArgument(f"group size {size} outside [1, {keys.count}]")
    return unbind(keys.keys[:size], s)


def noise_decomposition(keys: KeySet, group, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the retrieval of member ``index`` into its self term and crosstalk.

    Returns ``(signal, cross)`` where ``signal = unbind(K_i, bind(K_i, Z_i))`` and
    ``cross`` sums ``unbind(K_i, bind(K_j, Z_j))`` over every other member j.
    """
    g = _as_group(keys, group)
    n = g.shape[0]
    if not 0 <= index < n:
        raise InvalidArgument(f"index {index} out of range for group of {n}")
    k_i = keys.keys[index]
    signal = unbind(k_i, bind(k_i, g[index]))
    cross = np.zeros(keys.dim, dtype=signal.dtype)
    for j in range(n):
        if j != index:
            cross = cross + unbind(k_i, bind(keys.keys[j], g[j]))
    return signal, cross


def write_key_file(keys: KeySet, path) -> None:
    """Serialize ``keys``: 16-byte header, u64 seed, then R*D float32 values."""
    if keys.count > 0xFFFF or keys.dim > 0xFFFFFFFF:
        raise InvalidArgument("key set too large for the key file header")
    header = _KEY_HEADER.pack(KEY_FILE_MAGIC, KEY_FILE_VERSION, 0, keys.dim, keys.count, 0, keys.seed)
    body = keys.keys.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_key_file(path) -> KeySet:
    """Load a key file.

    When the stored values are the float32 image of ``generate_keys(D, R, seed)``
    the full-precision regenerated keys are returned; otherwise (e.g. delta keys)
    the stored values are returned as float64.
    """
    data = Path(path).read_bytes()
    if len(data) < _KEY_HEADER.size:
        raise InvalidArgument("key file truncated")
    magic, version, _, dim, count, _, seed = _KEY_HEADER.unpack_from(data)
    if magic != KEY_FILE_MAGIC:
        raise InvalidArgument(f"bad key file magic {magic!r}")
    if version != KEY_FILE_VERSION:
        raise InvalidArgument(f"unsupported key file version {version}")
    expected = _KEY_HEADER.size + 4 * dim * count
    if len(data) != expected:
        raise InvalidArgument(f"key file has {len(data)} bytes, expected {expected}")
    stored = np.frombuffer(data, dtype="<f4", offset=_KEY_HEADER.size).reshape(count, dim)
    regenerated = generate_keys(dim, count, seed)
    if np.array_equal(regenerated.as_float32(), stored):
        return regenerated
    return KeySet(dim=dim, count=count, seed=seed, keys=stored.astype(np.float64))
