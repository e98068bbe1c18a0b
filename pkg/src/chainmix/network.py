"""Full sequence model: encoder, stacked mixing blocks, pooling head.

The model is deliberately bare: token embedding (or a 2 -> d projection for
real-valued pairs), an optional learned positional table, L mixing blocks
with no residuals / normalization / dropout, then either a FLAT head (one
linear layer over all n*d outputs) or a CLS head (linear layer over the row
at position 0, where a reserved symbol was prepended).

reference_attention is the classical softmax baseline kept for behavioral
contrast: its row-stochastic weights confine every output row to the convex
hull of the value rows, which the factor chain is free to leave.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixer import MixerBlockParams, apply_block, init_block
from .numerics import (
    Tape,
    Var,
    add_table,
    embed_lookup,
    flatten_rows,
    init_weight,
    linear,
    squeeze_last,
    take_row,
)
from .protocol import ProtocolSpec, SparseLayout, build_layout

__all__ = [
    "ModelConfig",
    "ModelParams",
    "init_model",
    "named_params",
    "params_from_arrays",
    "encode",
    "encode_batch",
    "forward",
    "forward_batch",
    "reference_attention",
    "attention_weights",
    "count_flops_estimate",
]

TASKS = ("regression", "classification")
POOLINGS = ("FLAT", "CLS")
INPUT_MODES = ("token", "real_pair")
FACTOR_INPUTS = ("initial", "previous")


@dataclass(frozen=True)
class ModelConfig:
    task: str                     # "regression" | "classification"
    n: int                        # sequence length after any CLS prepend
    d: int                        # embedding width
    hidden: int                   # MLP hidden width
    blocks: int                   # number of mixing blocks (L)
    protocol: ProtocolSpec
    num_classes: int = 0          # classification only
    vocab: int = 0                # token mode only; CLS reserves id vocab-1
    pooling: str = "FLAT"
    use_pos_embed: bool = True
    input_mode: str = "token"
    factor_input: str = "initial"  # condition factors on X0 or on X_prev

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.factor_input not in FACTOR_INPUTS:
            raise ValueError(f"factor_input must be one of {FACTOR_INPUTS}")
        if self.task == "classification" and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        if self.input_mode == "token" and self.vocab < 1:
            raise ValueError("token mode needs vocab >= 1")
        if self.pooling == "CLS":
            if self.input_mode != "token":
                raise ValueError("CLS pooling requires token input")
            if self.vocab < 2:
                raise ValueError("CLS pooling needs a reserved symbol (vocab >= 2)")
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.protocol.n != self.n:
            raise ValueError(
                f"protocol is sized for n={self.protocol.n}, model has n={self.n}"
            )

    @property
    def out_width(self) -> int:
        return self.num_classes if self.task == "classification" else 1

    @property
    def cls_id(self) -> int:
        return self.vocab - 1


@dataclass
class ModelParams:
    embedding: Var | None
    input_proj: Var | None
    pos_table: Var | None
    blocks: list[MixerBlockParams]
    head_w: Var
    head_b: Var


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic init; same seed, same bits. Weights uniform(-s, s)
    with s = sqrt(6 / (fan_in + fan_out)) per table, biases zero."""
    rng = np.random.default_rng(seed)
    embedding = input_proj = pos_table = None
    if config.input_mode == "token":
        embedding = init_weight(rng, (config.vocab, config.d))
    else:
        input_proj = init_weight(rng, (2, config.d))
    if config.use_pos_embed:
        pos_table = init_weight(rng, (config.n, config.d))
    layout = build_layout(config.protocol)
    blocks = [
        init_block(rng, layout, config.d, config.hidden) for _ in range(config.blocks)
    ]
    head_in = config.n * config.d if config.pooling == "FLAT" else config.d
    head_w = init_weight(rng, (head_in, config.out_width))
    head_b = Var(np.zeros(config.out_width))
    return ModelParams(embedding, input_proj, pos_table, blocks, head_w, head_b)


def named_params(config: ModelConfig, params: ModelParams) -> list[tuple[str, Var]]:
    """Stable (name, Var) listing; the checkpoint and optimizer order."""
    out: list[tuple[str, Var]] = []
    if params.embedding is not None:
        out.append(("embedding", params.embedding))
    if params.input_proj is not None:
        out.append(("input_proj", params.input_proj))
    if params.pos_table is not None:
        out.append(("pos_table", params.pos_table))
    for l, block in enumerate(params.blocks):
        for m, p in enumerate(block.factor_mlps):
            for leaf in ("w1", "b1", "w2", "b2"):
                out.append((f"block{l}.factor{m}.{leaf}", getattr(p, leaf)))
        for leaf in ("w1", "b1", "w2", "b2"):
            out.append((f"block{l}.value.{leaf}", getattr(block.value_mlp, leaf)))
    out.append(("head.w", params.head_w))
    out.append(("head.b", params.head_b))
    return out


def params_from_arrays(config: ModelConfig, arrays: dict) -> ModelParams:
    """Rebuild ModelParams from a checkpoint's {name: array} dict."""
    fresh = init_model(config, seed=0)
    named = named_params(config, fresh)
    missing = [name for name, _ in named if name not in arrays]
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {missing}")
    if len(arrays) != len(named):
        extra = set(arrays) - {name for name, _ in named}
        raise ValueError(f"checkpoint has unexpected tensors: {sorted(extra)}")
    for name, var in named:
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != var.value.shape:
            raise ValueError(
                f"tensor {name!r} has shape {arr.shape}, model wants {var.value.shape}"
            )
        var.value = arr
    return fresh


def encode_batch(tape: Tape | None, inputs, config: ModelConfig, params: ModelParams) -> Var:
    """Batched encoder: (B, ...) raw input -> (B, n, d) rows.

    Token mode takes int ids (B, n) — or (B, n-1) under CLS pooling, which
    prepends the reserved id. real_pair mode takes float pairs (B, n, 2).
    """
    if config.input_mode == "token":
        idx = np.asarray(inputs)
        if idx.ndim != 2:
            raise ValueError(f"token input must be (batch, length), got {idx.shape}")
        if config.pooling == "CLS":
            if idx.shape[1] != config.n - 1:
                raise ValueError(
                    f"CLS pooling wants length {config.n - 1}, got {idx.shape[1]}"
                )
            cls_col = np.full((idx.shape[0], 1), config.cls_id, dtype=idx.dtype)
            idx = np.concatenate([cls_col, idx], axis=1)
        elif idx.shape[1] != config.n:
            raise ValueError(f"sequence length {idx.shape[1]} != n={config.n}")
        x = embed_lookup(tape, params.embedding, idx)
    else:
        arr = np.asarray(inputs, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != (config.n, 2):
            raise ValueError(
                f"real_pair input must be (batch, {config.n}, 2), got {arr.shape}"
            )
        x = linear(tape, Var(arr), params.input_proj)
    if config.use_pos_embed:
        x = add_table(tape, x, params.pos_table)
    return x


def forward_batch(tape: Tape | None, inputs, config: ModelConfig, params: ModelParams) -> Var:
    """(B, ...) inputs -> (B,) predictions or (B, C) logits."""
    x0 = encode_batch(tape, inputs, config, params)
    x = x0
    for block in params.blocks:
        cond = x0 if config.factor_input == "initial" else x
        x = apply_block(tape, x, cond, block)
    pooled = flatten_rows(tape, x) if config.pooling == "FLAT" else take_row(tape, x, 0)
    y = linear(tape, pooled, params.head_w, params.head_b)
    if config.task == "regression":
        y = squeeze_last(tape, y)
    return y


def encode(seq, config: ModelConfig, params: ModelParams) -> np.ndarray:
    """Single-sequence encoder: raw input -> (n, d) array."""
    batched = np.asarray(seq)[None, ...]
    return encode_batch(None, batched, config, params).value[0]


def forward(seq, config: ModelConfig, params: ModelParams):
    """Single-sequence prediction: scalar for regression, (C,) logits else."""
    out = forward_batch(None, np.asarray(seq)[None, ...], config, params).value[0]
    return float(out) if config.task == "regression" else out


def attention_weights(x: np.ndarray, wq: np.ndarray, wk: np.ndarray) -> np.ndarray:
    """Row-softmax of x Wq (x Wk)^T / sqrt(D), max-shifted for stability."""
    q = x @ wq
    k = x @ wk
    scores = q @ k.T / np.sqrt(wq.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def reference_attention(x, wq, wk, wv) -> np.ndarray:
    """Classical softmax attention block, forward only; the contrast case.

    Every output row is a convex combination of the value rows: weights are
    nonnegative and each row sums to one.
    """
    x = np.asarray(x, dtype=np.float64)
    a = attention_weights(x, np.asarray(wq), np.asarray(wk))
    return a @ (x @ np.asarray(wv))


def count_flops_estimate(config: ModelConfig) -> dict:
    """Exact multiply counts per forward pass of one sequence."""
    spec = config.protocol
    l, n, d, h = config.blocks, config.n, config.d, config.hidden
    return {
        "mixing_multiplies": l * spec.m * n * spec.k * d,
        "factor_mlp_multiplies": l * spec.m * n * (d * h + h * spec.k),
        "value_mlp_multiplies": l * n * (d * h + h * d),
        "head_multiplies": (n * d if config.pooling == "FLAT" else d) * config.out_width,
        "stored_entries_per_block": spec.m * n * spec.k,
        "stored_entries_total": l * spec.m * n * spec.k,
    }
