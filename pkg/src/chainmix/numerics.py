"""Minimal differentiable numeric core on float64 numpy arrays.

Everything is reverse-mode: ops run eagerly, record a pull-back closure on a
Tape, and backward() replays the closures in reverse. Only the op set this
package needs is provided; shapes are (..., rows, cols) with optional
leading batch axes, and parameters are always plain 2-D/1-D tensors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

__all__ = [
    "Var",
    "Tape",
    "MlpParams",
    "AdamState",
    "linear",
    "gelu",
    "mlp3",
    "sparse_mix",
    "embed_lookup",
    "add_table",
    "take_row",
    "flatten_rows",
    "squeeze_last",
    "mse",
    "cross_entropy",
    "backward",
    "zero_grads",
    "adam_step",
    "init_weight",
    "init_mlp",
    "save_checkpoint",
    "load_checkpoint",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Var:
    """A float64 array plus a gradient slot filled in by backward()."""

    __slots__ = ("value", "grad")

    def __init__(self, value) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"Var(shape={self.value.shape})"


class Tape:
    """Records pull-back closures during the forward pass; single use."""

    __slots__ = ("_steps", "_used")

    def __init__(self) -> None:
        self._steps: list = []
        self._used = False

    def record(self, step) -> None:
        self._steps.append(step)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _accumulate(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = g
    else:
        var.grad = var.grad + g


def backward(loss: Var, tape: Tape) -> None:
    """Propagate d(loss)/d(x) into .grad of every Var the tape touched."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    if tape._used:
        raise RuntimeError("tape already consumed by a previous backward()")
    tape._used = True
    loss.grad = np.ones_like(loss.value)
    for step in reversed(tape._steps):
        step()


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# --- ops --------------------------------------------------------------------


def linear(tape: Tape | None, x: Var, w: Var, b: Var | None = None) -> Var:
    """y = x @ w (+ b). x: (..., a), w: (a, o), b: (o,)."""
    xv = x.value
    a = xv.shape[-1]
    if w.value.shape[0] != a:
        raise ValueError(f"linear: x has width {a}, w is {w.value.shape}")
    x2 = xv.reshape(-1, a)
    y2 = x2 @ w.value
    if b is not None:
        y2 = y2 + b.value
    out = Var(y2.reshape(*xv.shape[:-1], w.value.shape[1]))
    if tape is not None:
        wv = w.value

        def step() -> None:
            g = out.grad
            if g is None:
                return
            g2 = g.reshape(-1, g.shape[-1])
            _accumulate(x, (g2 @ wv.T).reshape(xv.shape))
            _accumulate(w, x2.T @ g2)
            if b is not None:
                _accumulate(b, g2.sum(axis=0))

        tape.record(step)
    return out


def gelu(tape: Tape | None, x: Var) -> Var:
    """Elementwise x * Phi(x) with the exact Gaussian CDF (erf, no tanh fit)."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    out = Var(xv * cdf)
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            dens = np.exp(-0.5 * xv * xv) * _INV_SQRT2PI
            _accumulate(x, g * (cdf + xv * dens))

        tape.record(step)
    return out


@dataclass
class MlpParams:
    """Three-layer perceptron: linear -> gelu -> linear."""

    w1: Var
    b1: Var
    w2: Var
    b2: Var

    def vars(self) -> list[Var]:
        return [self.w1, self.b1, self.w2, self.b2]


def mlp3(tape: Tape | None, x: Var, p: MlpParams) -> Var:
    return linear(tape, gelu(tape, linear(tape, x, p.w1, p.b1)), p.w2, p.b2)


def _inverse_table(cols: np.ndarray, n: int) -> np.ndarray | None:
    """Inverse of each k-slice of cols, or None if any slice repeats a row.

    Protocol layouts shift the row index by a fixed offset per slot, so every
    slice is a permutation; then the value gradient is a pure gather and the
    whole op runs as batched matmuls. Arbitrary tables fall back to a per-slot
    loop with scatter-add.
    """
    inv = np.empty((n, cols.shape[1]), dtype=np.int64)
    rows = np.arange(n, dtype=np.int64)
    for k in range(cols.shape[1]):
        slot = cols[:, k]
        if not (np.bincount(slot, minlength=n) == 1).all():
            return None
        inv[slot, k] = rows
    return inv


def sparse_mix(tape: Tape | None, values: Var, cols: np.ndarray, v: Var) -> Var:
    """out[..., i, :] = sum_k values[..., i, k] * v[..., cols[i, k], :].

    cols is a fixed (n, k) int table shared across leading axes; a column may
    repeat within a row, in which case contributions accumulate. Accumulation
    runs in ascending k order.
    """
    cols = np.asarray(cols)
    if cols.ndim != 2:
        raise ValueError(f"cols must be 2-D, got shape {cols.shape}")
    n = v.value.shape[-2]
    if values.value.shape[-2:] != cols.shape:
        raise ValueError(
            f"values shape {values.value.shape} does not end in {cols.shape}"
        )
    if v.value.shape[:-2] != values.value.shape[:-2]:
        raise ValueError("values and v disagree on leading axes")
    if cols.shape[0] != n:
        raise ValueError(f"cols has {cols.shape[0]} rows, v has {n}")
    if cols.size and (cols.min() < 0 or cols.max() >= n):
        raise ValueError(f"cols must lie in [0, {n})")

    vv = v.value
    vals = values.value
    nk = cols.shape[1]
    inv = _inverse_table(cols, n)
    if inv is not None:
        gathered = vv[..., cols, :]  # (..., n, k, d)
        out = Var((vals[..., None, :] @ gathered)[..., 0, :])
    else:
        gathered = None
        acc = np.zeros((*vv.shape[:-2], n, vv.shape[-1]))
        for k in range(nk):
            acc += vals[..., :, k, None] * vv[..., cols[:, k], :]
        out = Var(acc)
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            if inv is not None:
                _accumulate(values, (gathered @ g[..., :, None])[..., 0])
                w2 = vals[..., inv, np.arange(nk)]  # vals[..., inv[j, k], k]
                g2 = g[..., inv, :]
                _accumulate(v, (w2[..., None, :] @ g2)[..., 0, :])
                return
            dvals = np.empty_like(vals)
            dv = np.zeros_like(vv)
            batch_rows = None
            dv3 = None
            for k in range(nk):
                slot = cols[:, k]
                dvals[..., :, k] = (g * vv[..., slot, :]).sum(axis=-1)
                contrib = vals[..., :, k, None] * g
                if dv.ndim == 2:
                    np.add.at(dv, slot, contrib)
                else:
                    if batch_rows is None:
                        flat_lead = int(np.prod(dv.shape[:-2]))
                        dv3 = dv.reshape(flat_lead, n, dv.shape[-1])
                        batch_rows = np.arange(flat_lead)[:, None]
                    np.add.at(
                        dv3,
                        (batch_rows, slot[None, :]),
                        contrib.reshape(dv3.shape[0], n, dv.shape[-1]),
                    )
            _accumulate(values, dvals)
            _accumulate(v, dv)

        tape.record(step)
    return out


def embed_lookup(tape: Tape | None, table: Var, idx: np.ndarray) -> Var:
    """Row gather out[...] = table[idx[...]]; grads scatter-add back."""
    idx = np.asarray(idx)
    vocab = table.value.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ValueError(f"token id outside [0, {vocab})")
    out = Var(table.value[idx])
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.value)
            np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, g.shape[-1]))

        tape.record(step)
    return out


def add_table(tape: Tape | None, x: Var, t: Var) -> Var:
    """x (..., n, d) + t (n, d), broadcasting t over leading axes."""
    out = Var(x.value + t.value)
    extra = out.value.ndim - t.value.ndim
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(x, g)
            _accumulate(t, g.sum(axis=tuple(range(extra))) if extra else g)

        tape.record(step)
    return out


def take_row(tape: Tape | None, x: Var, i: int) -> Var:
    """Select row i: (..., n, d) -> (..., d)."""
    out = Var(x.value[..., i, :].copy())
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            dx = np.zeros_like(x.value)
            dx[..., i, :] = g
            _accumulate(x, dx)

        tape.record(step)
    return out


def flatten_rows(tape: Tape | None, x: Var) -> Var:
    """(..., n, d) -> (..., n*d), row-major."""
    xv = x.value
    out = Var(xv.reshape(*xv.shape[:-2], xv.shape[-2] * xv.shape[-1]))
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(x, g.reshape(xv.shape))

        tape.record(step)
    return out


def squeeze_last(tape: Tape | None, x: Var) -> Var:
    """(..., 1) -> (...)."""
    xv = x.value
    if xv.shape[-1] != 1:
        raise ValueError(f"last axis must be 1, got shape {xv.shape}")
    out = Var(xv.reshape(xv.shape[:-1]))
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(x, g.reshape(xv.shape))

        tape.record(step)
    return out


# --- losses -------------------------------------------------------------


def mse(tape: Tape | None, pred: Var, target: np.ndarray) -> Var:
    """Mean squared difference over all elements."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.value.shape:
        raise ValueError(f"target shape {t.shape} != pred shape {pred.value.shape}")
    diff = pred.value - t
    out = Var(np.mean(diff * diff))
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(pred, g * (2.0 / diff.size) * diff)

        tape.record(step)
    return out


def cross_entropy(tape: Tape | None, logits: Var, labels: np.ndarray) -> Var:
    """Mean negative log softmax probability of the labels; max-shifted."""
    z = logits.value
    if z.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {z.shape}")
    labels = np.asarray(labels)
    b, c = z.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} != ({b},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label outside [0, {c})")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    norm = expz.sum(axis=1, keepdims=True)
    logp = shifted - np.log(norm)
    out = Var(-logp[np.arange(b), labels].mean())
    if tape is not None:

        def step() -> None:
            g = out.grad
            if g is None:
                return
            d = expz / norm
            d[np.arange(b), labels] -= 1.0
            _accumulate(logits, d * (g / b))

        tape.record(step)
    return out


# --- optimizer ---------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair per parameter tensor."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 0.001) -> "AdamState":
        state = cls(lr=lr)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params, grads, state: AdamState) -> None:
    """One in-place Adam update: p -= lr * mhat / (sqrt(vhat) + eps)."""
    if len(params) != len(state.m):
        raise ValueError("state was built for a different parameter list")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            raise ValueError("missing gradient for a parameter")
        if g.shape != p.value.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.value.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- init ----------------------------------------------------------------


def init_weight(rng: np.random.Generator, shape: tuple[int, int]) -> Var:
    """uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); 2-D only."""
    fan_in, fan_out = shape
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return Var(rng.uniform(-s, s, size=shape))


def init_mlp(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> MlpParams:
    return MlpParams(
        w1=init_weight(rng, (d_in, hidden)),
        b1=Var(np.zeros(hidden)),
        w2=init_weight(rng, (hidden, d_out)),
        b2=Var(np.zeros(d_out)),
    )


# --- checkpoint ----------------------------------------------------------

_CKPT_FORMAT = "chainmix.ckpt.v1"


def save_checkpoint(path, named_arrays, config: dict) -> None:
    """One file: a JSON manifest line, then little-endian float64 payload.

    named_arrays is an ordered list of (name, array). Round trips are
    bit-exact; non-finite values are rejected at the boundary.
    """
    tensors = []
    chunks = []
    offset = 0
    for name, arr in named_arrays:
        a = np.asarray(arr, dtype=np.dtype("<f8"))  # tobytes emits C order
        if not np.isfinite(a).all():
            raise ValueError(f"non-finite values in tensor {name!r}")
        raw = a.tobytes()
        tensors.append(
            {"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": _CKPT_FORMAT, "config": config, "tensors": tensors}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of save_checkpoint: (config, {name: array})."""
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    manifest = json.loads(data[:nl].decode("utf-8"))
    if manifest.get("format") != _CKPT_FORMAT:
        raise ValueError(f"not a {_CKPT_FORMAT} file: {path}")
    payload = data[nl + 1 :]
    arrays = {}
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(
            payload, dtype=np.dtype("<f8"), count=count, offset=t["offset"]
        )
        arrays[t["name"]] = arr.reshape(t["shape"]).copy()
    return manifest["config"], arrays
