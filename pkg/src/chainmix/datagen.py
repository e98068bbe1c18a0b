"""Synthetic long-sequence tasks, generated from a counter-based RNG.

Every sample is a pure function of (seed, index), so datasets are never
stored: any index can be regenerated on demand, in any order, on any
machine. The generator is a fixed SplitMix64 construction:

    mix(z): z ^= z>>30; z *= 0xBF58476D1CE4E5B9;
            z ^= z>>27; z *= 0x94D049BB133111EB; z ^= z>>31   (mod 2^64)
    G = 0x9E3779B97F4A7C15
    k0 = mix(seed);  k1 = mix(k0 + G*(index+1));  k2 = mix(k1 + G*(field+1))
    draw j = mix(k2 + G*(j+1)),  j = 0, 1, 2, ...

Separate `field` codes keep the value/position/noise/signal streams of one
sample independent. Unit doubles take the top 53 bits ((x >> 11) * 2^-53);
bounded ints use the multiply-shift ((x >> 32) * n) >> 32, whose bias is
below n * 2^-32 — negligible against the statistical tolerances used here.

Tasks:

* adding: pairs (a_i, b_i) with a_i ~ uniform(-1, 1) and b zero except two
  marked positions; the target is y = 0.5 + (a_t1 + a_t2) / 4. A prediction
  counts as correct iff |y - yhat| < 0.04, strictly.
* temporal_order: noise symbols a,b,c,d with two signal symbols from {X, Y}
  at distinct random positions; the class is the (first, second) signal pair
  in position order: XX -> 0, XY -> 1, YX -> 2, YY -> 3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetSpec",
    "AddingSample",
    "TemporalOrderSample",
    "ALPHABET",
    "gen_adding",
    "gen_temporal_order",
    "adding_batch",
    "temporal_order_batch",
    "adding_correct",
    "write_samples",
    "read_samples",
]

TASKS = ("adding", "temporal_order")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# field codes, one stream per sampled quantity
_F_VALUES = 1
_F_POSITIONS = 2
_F_NOISE = 3
_F_SIGNALS = 4

ALPHABET = "abcdXY"  # token ids 0..5; X = 4, Y = 5
_X_ID, _Y_ID = 4, 5


def _mix(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _MIX1) & _MASK
    z ^= z >> 27
    z = (z * _MIX2) & _MASK
    z ^= z >> 31
    return z


def _key(seed: int, index: int, field: int) -> int:
    k0 = _mix(seed)
    k1 = _mix((k0 + _GOLDEN * (index + 1)) & _MASK)
    return _mix((k1 + _GOLDEN * (field + 1)) & _MASK)


def _draws(seed: int, index: int, field: int, count: int) -> np.ndarray:
    """count raw 64-bit draws for one (seed, index, field) stream."""
    k = np.uint64(_key(seed, index, field))
    ctr = k + np.uint64(_GOLDEN) * np.arange(1, count + 1, dtype=np.uint64)
    return _mix_np(ctr)


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _unit(x: np.ndarray) -> np.ndarray:
    """uint64 -> float64 in [0, 1), top 53 bits."""
    return (x >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def _below(x, n: int):
    """uint64 -> int in [0, n) by 32-bit multiply-shift."""
    return ((x >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32)


@dataclass(frozen=True)
class DatasetSpec:
    """Names a reproducible dataset: every index < count is one sample."""

    task: str
    n: int
    count: int
    seed: int

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class AddingSample:
    a: np.ndarray  # (n,) float64 in (-1, 1)
    b: np.ndarray  # (n,) float64 in {0, 1}, exactly two ones
    y: float


@dataclass(frozen=True)
class TemporalOrderSample:
    tokens: np.ndarray  # (n,) int64 ids into ALPHABET
    label: int          # 0..3


def _check_index(spec: DatasetSpec, index: int) -> None:
    if not 0 <= index < spec.count:
        raise ValueError(f"index {index} outside [0, {spec.count})")


def _positions(seed: int, index: int, n: int) -> tuple[int, int]:
    """Two distinct uniform positions; order is whatever the draws give."""
    raw = _draws(seed, index, _F_POSITIONS, 2)
    t1 = int(_below(raw[0], n))
    r = int(_below(raw[1], n - 1))
    t2 = r + 1 if r >= t1 else r
    return t1, t2


def gen_adding(spec: DatasetSpec, index: int) -> AddingSample:
    if spec.task != "adding":
        raise ValueError(f"spec is for task {spec.task!r}")
    _check_index(spec, index)
    a = 2.0 * _unit(_draws(spec.seed, index, _F_VALUES, spec.n)) - 1.0
    t1, t2 = _positions(spec.seed, index, spec.n)
    b = np.zeros(spec.n)
    b[t1] = 1.0
    b[t2] = 1.0
    y = 0.5 + (a[t1] + a[t2]) / 4.0
    return AddingSample(a=a, b=b, y=float(y))


def gen_temporal_order(spec: DatasetSpec, index: int) -> TemporalOrderSample:
    if spec.task != "temporal_order":
        raise ValueError(f"spec is for task {spec.task!r}")
    _check_index(spec, index)
    tokens = _below(_draws(spec.seed, index, _F_NOISE, spec.n), 4).astype(np.int64)
    t1, t2 = _positions(spec.seed, index, spec.n)
    sig = _below(_draws(spec.seed, index, _F_SIGNALS, 2), 2).astype(np.int64)
    tokens[t1] = _X_ID + sig[0]
    tokens[t2] = _X_ID + sig[1]
    first, second = (sig[0], sig[1]) if t1 < t2 else (sig[1], sig[0])
    label = int(2 * first + second)  # X=0, Y=1 per signal
    return TemporalOrderSample(tokens=tokens, label=label)


# --- vectorized batch paths (bit-identical to the per-sample functions) ---


def _batch_keys(seed: int, indices: np.ndarray, field: int) -> np.ndarray:
    k0 = np.uint64(_mix(seed))
    g = np.uint64(_GOLDEN)
    k1 = _mix_np(k0 + g * (indices.astype(np.uint64) + np.uint64(1)))
    # fold the field offset on Python ints: numpy warns on scalar wraparound
    return _mix_np(k1 + np.uint64((_GOLDEN * (field + 1)) & _MASK))


def _batch_draws(seed: int, indices: np.ndarray, field: int, count: int) -> np.ndarray:
    keys = _batch_keys(seed, indices, field)  # (B,)
    g = np.uint64(_GOLDEN)
    ctr = keys[:, None] + g * np.arange(1, count + 1, dtype=np.uint64)[None, :]
    return _mix_np(ctr)  # (B, count)


def _batch_positions(seed: int, indices: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    raw = _batch_draws(seed, indices, _F_POSITIONS, 2)
    t1 = _below(raw[:, 0], n).astype(np.int64)
    r = _below(raw[:, 1], n - 1).astype(np.int64)
    t2 = r + (r >= t1)
    return t1, t2


def adding_batch(spec: DatasetSpec, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(a, b, y) arrays for many indices at once: (B, n), (B, n), (B,)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= spec.count):
        raise ValueError(f"index outside [0, {spec.count})")
    a = 2.0 * _unit(_batch_draws(spec.seed, indices, _F_VALUES, spec.n)) - 1.0
    t1, t2 = _batch_positions(spec.seed, indices, spec.n)
    b = np.zeros((indices.size, spec.n))
    rows = np.arange(indices.size)
    b[rows, t1] = 1.0
    b[rows, t2] = 1.0
    y = 0.5 + (a[rows, t1] + a[rows, t2]) / 4.0
    return a, b, y


def temporal_order_batch(spec: DatasetSpec, indices) -> tuple[np.ndarray, np.ndarray]:
    """(tokens, labels) for many indices at once: (B, n) int64, (B,) int64."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= spec.count):
        raise ValueError(f"index outside [0, {spec.count})")
    tokens = _below(_batch_draws(spec.seed, indices, _F_NOISE, spec.n), 4).astype(np.int64)
    t1, t2 = _batch_positions(spec.seed, indices, spec.n)
    sig = _below(_batch_draws(spec.seed, indices, _F_SIGNALS, 2), 2).astype(np.int64)
    rows = np.arange(indices.size)
    tokens[rows, t1] = _X_ID + sig[:, 0]
    tokens[rows, t2] = _X_ID + sig[:, 1]
    swap = t1 >= t2
    first = np.where(swap, sig[:, 1], sig[:, 0])
    second = np.where(swap, sig[:, 0], sig[:, 1])
    labels = 2 * first + second
    return tokens, labels


def adding_correct(y: float, y_hat: float) -> bool:
    """Strict threshold: |y - y_hat| < 0.04; exactly 0.04 off is wrong."""
    return bool(abs(float(y) - float(y_hat)) < 0.04)


# --- optional text export --------------------------------------------------


def write_samples(spec: DatasetSpec, dest) -> None:
    """One JSON header line, then one comma-separated sample per line.

    adding rows are a_0,b_0,...,a_{n-1},b_{n-1},y with full-precision float
    reprs; temporal_order rows are the symbols followed by the label.
    """
    header = json.dumps(
        {"task": spec.task, "N": spec.n, "count": spec.count, "seed": spec.seed}
    )
    with open(dest, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for index in range(spec.count):
            if spec.task == "adding":
                s = gen_adding(spec, index)
                cells = []
                for ai, bi in zip(s.a, s.b):
                    cells.append(repr(float(ai)))
                    cells.append(str(int(bi)))
                cells.append(repr(s.y))
            else:
                s = gen_temporal_order(spec, index)
                cells = [ALPHABET[t] for t in s.tokens]
                cells.append(str(s.label))
            fh.write(",".join(cells) + "\n")


def read_samples(src) -> tuple[DatasetSpec, list]:
    """Inverse of write_samples."""
    lines = Path(src).read_text().splitlines()
    head = json.loads(lines[0])
    spec = DatasetSpec(
        task=head["task"], n=head["N"], count=head["count"], seed=head["seed"]
    )
    samples = []
    for line in lines[1 : spec.count + 1]:
        cells = line.split(",")
        if spec.task == "adding":
            a = np.asarray([float(c) for c in cells[0 : 2 * spec.n : 2]])
            b = np.asarray([float(c) for c in cells[1 : 2 * spec.n : 2]])
            samples.append(AddingSample(a=a, b=b, y=float(cells[-1])))
        else:
            tokens = np.asarray([ALPHABET.index(c) for c in cells[: spec.n]], dtype=np.int64)
            samples.append(TemporalOrderSample(tokens=tokens, label=int(cells[-1])))
    return spec, samples
