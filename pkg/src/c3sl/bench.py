"""Monte-Carlo retrieval quality of the codec.

For each trial a fresh key set and a group of R unit-norm Gaussian features
are drawn; every member is encoded, superposed and decoded again. Reported per
R: mean/std cosine between restored and original features, and the mean
energy of the self term and of the crosstalk in each retrieval.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import codec
from .errors import InvalidArgument

BENCH_FIELDS = ["dim", "ratio", "trials", "key_mode", "cos_mean", "cos_std", "cos_min",
                "signal_energy", "cross_energy"]


@dataclass
class BenchRow:
    dim: int
    ratio: int
    trials: int
    key_mode: str
    cos_mean: float
    cos_std: float
    cos_min: float
    signal_energy: float
    cross_energy: float


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; identical rows give exactly 1.0 (sqrt(x*x) == x in IEEE)."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    denom = np.sqrt(aa * bb)
    return np.einsum("ij,ij->i", a, b) / np.where(denom > 0, denom, 1.0)


def _trial_keys(dim: int, ratio: int, seed: int, trial: int, delta: bool) -> codec.KeySet:
    if delta:
        return codec.delta_keys(dim, ratio)
    key_seed = int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])
    return codec.generate_keys(dim, ratio, key_seed)


def run(dim: int, ratio: int, trials: int, seed: int = 0, delta_keys: bool = False) -> BenchRow:
    if dim < 1 or ratio < 1 or trials < 1:
        raise InvalidArgument("dim, ratio and trials must be positive")
    if delta_keys and ratio > dim:
        raise InvalidArgument(f"only {dim} distinct delta keys exist at D={dim}")
    cos, sig, cross = [], [], []
    for t in range(trials):
        keys = _trial_keys(dim, ratio, seed, t, delta_keys)
        rng = np.random.default_rng([seed, t, 1])
        z = rng.normal(size=(ratio, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        restored = codec.decode_group(keys, codec.encode_group(keys, z), ratio)
        signal = codec.unbind(keys.keys, codec.bind(keys.keys, z))
        noise = restored - signal
        cos.append(cosine_rows(restored, z))
        sig.append(np.einsum("ij,ij->i", signal, signal))
        cross.append(np.einsum("ij,ij->i", noise, noise))
    cos = np.concatenate(cos)
    return BenchRow(dim, ratio, trials, "delta" if delta_keys else "gaussian",
                    float(cos.mean()), float(cos.std()), float(cos.min()),
                    float(np.concatenate(sig).mean()), float(np.concatenate(cross).mean()))


def sweep(dim: int, ratios, trials: int, seed: int = 0, delta_keys: bool = False) -> list[BenchRow]:
    return [run(dim, r, trials, seed, delta_keys) for r in ratios]


def write_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_FIELDS)
        for row in rows:
            d = asdict(row)
            writer.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in BENCH_FIELDS])


def write_json(rows: list[BenchRow], path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n")
