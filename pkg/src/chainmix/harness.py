"""Command-line front end: train / eval / analyze / gendata.

Configuration precedence is flag > config file > built-in default. Config
files are plain `key = value` lines (# comments allowed) using the same
names as the long flags, with underscores. Exit codes: 0 success, 1 usage
or config error, 2 runtime failure.

Metric output is line-delimited JSON in <out>/metrics.jsonl. Records hold
step, epoch, split, loss and accuracy; wall-clock timing goes to the stderr
log only, so same-seed runs produce byte-identical metric files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import DatasetSpec, adding_batch, temporal_order_batch, write_samples
from .network import (
    ModelConfig,
    count_flops_estimate,
    forward_batch,
    init_model,
    named_params,
    params_from_arrays,
)
from .numerics import (
    AdamState,
    Tape,
    Var,
    adam_step,
    backward,
    cross_entropy,
    load_checkpoint,
    mse,
    save_checkpoint,
    zero_grads,
)
from .protocol import (
    ProtocolSpec,
    build_layout,
    circulant_rank,
    export_layout,
    factor_offsets,
    reachability_complete,
    stored_entries,
)

__all__ = ["RunConfig", "MetricsRecord", "ConfigError", "main", "entrypoint"]

log = logging.getLogger("chainmix")

_EVAL_BATCH = 256


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 1."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise _UsageError(message)


DEFAULTS: dict = {
    "task": "adding",
    "protocol": "CHORD",
    "n": 128,
    "k": None,            # protocol default
    "m": None,            # protocol default
    "blocks": 1,
    "embed": 32,
    "hidden": 32,
    "vocab": None,        # task default
    "pooling": "FLAT",
    "pos_embed": True,
    "input_mode": None,   # task default
    "factor_input": "initial",
    "lr": 0.001,
    "batch": 40,
    "epochs": 30,
    "eval_interval": 0,   # 0 = once per epoch
    "train_count": 20000,
    "test_count": 2000,
    "early_stop": True,
    "seed": 0,
    "out": "runs/latest",
    "count": 1000,        # gendata only
}

_TASK_FILL = {
    "adding": {"input_mode": "real_pair", "vocab": 0},
    "temporal_order": {"input_mode": "token", "vocab": 6},
}

_INT_KEYS = {
    "n", "k", "m", "blocks", "embed", "hidden", "vocab", "batch", "epochs",
    "eval_interval", "train_count", "test_count", "seed", "count",
}
_FLOAT_KEYS = {"lr"}
_BOOL_KEYS = {"pos_embed", "early_stop"}


@dataclass(frozen=True)
class RunConfig:
    task: str
    protocol: str
    n: int
    k: int | None
    m: int | None
    blocks: int
    embed: int
    hidden: int
    vocab: int
    pooling: str
    pos_embed: bool
    input_mode: str
    factor_input: str
    lr: float
    batch: int
    epochs: int
    eval_interval: int
    train_count: int
    test_count: int
    early_stop: bool
    seed: int
    out: str

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_interval < 0:
            raise ValueError("eval_interval must be >= 0")
        if self.train_count < 1 or self.test_count < 1:
            raise ValueError("train_count and test_count must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    split: str
    loss: float
    accuracy: float
    wall_seconds: float  # logged to stderr only; excluded from metrics.jsonl

    def json_line(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "epoch": self.epoch,
                "loss": self.loss,
                "split": self.split,
                "step": self.step,
            },
            sort_keys=True,
        )


def build_model_config(cfg: RunConfig) -> ModelConfig:
    spec = ProtocolSpec(kind=cfg.protocol, n=cfg.n, k=cfg.k, m=cfg.m)
    task = "regression" if cfg.task == "adding" else "classification"
    return ModelConfig(
        task=task,
        n=cfg.n,
        d=cfg.embed,
        hidden=cfg.hidden,
        blocks=cfg.blocks,
        protocol=spec,
        num_classes=4 if cfg.task == "temporal_order" else 0,
        vocab=cfg.vocab,
        pooling=cfg.pooling,
        use_pos_embed=cfg.pos_embed,
        input_mode=cfg.input_mode,
        factor_input=cfg.factor_input,
    )


# --- configuration resolution ------------------------------------------


def parse_config_file(path) -> dict:
    merged = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        merged[key] = _coerce(key, value, where=f"{path}:{lineno}")
    return merged


def _coerce(key: str, value: str, where: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return value
    except ValueError as e:
        raise ConfigError(f"{where}: bad value for {key}: {e}") from e


def resolve_options(args: argparse.Namespace) -> dict:
    """DEFAULTS, overlaid by the config file, overlaid by explicit flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    task = merged.get("task")
    if task in _TASK_FILL:
        for key, value in _TASK_FILL[task].items():
            if merged[key] is None:
                merged[key] = value
    return merged


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    merged = resolve_options(args)
    merged.pop("count", None)
    try:
        cfg = RunConfig(**merged)
        build_model_config(cfg)  # validate the model side now, not mid-run
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


# --- data + evaluation ----------------------------------------------------


def _dataset_spec(cfg: RunConfig) -> DatasetSpec:
    return DatasetSpec(
        task=cfg.task, n=cfg.n, count=cfg.train_count + cfg.test_count, seed=cfg.seed
    )


def _materialize(spec: DatasetSpec, indices: np.ndarray):
    """(inputs, targets) arrays for the given sample indices."""
    if spec.task == "adding":
        a, b, y = adding_batch(spec, indices)
        return np.stack([a, b], axis=-1), y
    tokens, labels = temporal_order_batch(spec, indices)
    return tokens, labels


def evaluate_arrays(config: ModelConfig, params, inputs, targets) -> tuple[float, float]:
    """Mean loss and accuracy over a dataset, in fixed-size eval batches."""
    total = len(targets)
    loss_sum = 0.0
    correct = 0
    for s in range(0, total, _EVAL_BATCH):
        sl = slice(s, min(s + _EVAL_BATCH, total))
        out = forward_batch(None, inputs[sl], config, params)
        if config.task == "regression":
            diff = out.value - targets[sl]
            loss_sum += float((diff * diff).sum())
            correct += int((np.abs(diff) < 0.04).sum())
        else:
            size = targets[sl].shape[0]
            loss_sum += float(cross_entropy(None, out, targets[sl]).value) * size
            correct += int((out.value.argmax(axis=1) == targets[sl]).sum())
    return loss_sum / total, correct / total


# --- train ------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = build_model_config(cfg)
    spec = _dataset_spec(cfg)

    train_idx = np.arange(cfg.train_count)
    test_idx = np.arange(cfg.train_count, cfg.train_count + cfg.test_count)
    train_inputs, train_targets = _materialize(spec, train_idx)
    test_inputs, test_targets = _materialize(spec, test_idx)
    # the train split is summarized on a fixed-size prefix to keep eval cheap
    peek = min(cfg.train_count, cfg.test_count)

    params = init_model(config, cfg.seed)
    named = named_params(config, params)
    pvars = [v for _, v in named]
    adam = AdamState.for_params(pvars, lr=cfg.lr)
    config_dict = dataclasses.asdict(cfg)

    def save(name: str) -> None:
        save_checkpoint(out_dir / name, [(n, v.value) for n, v in named], config_dict)

    t0 = time.monotonic()
    best_acc = -1.0
    step = 0
    steps_since_eval = 0

    with open(out_dir / "metrics.jsonl", "w", newline="\n") as metrics:

        def eval_event(epoch: int) -> float:
            nonlocal steps_since_eval
            steps_since_eval = 0
            wall = time.monotonic() - t0
            tr_loss, tr_acc = evaluate_arrays(
                config, params, train_inputs[:peek], train_targets[:peek]
            )
            te_loss, te_acc = evaluate_arrays(config, params, test_inputs, test_targets)
            for split, loss_v, acc in (("train", tr_loss, tr_acc), ("test", te_loss, te_acc)):
                rec = MetricsRecord(step, epoch, split, loss_v, acc, wall)
                metrics.write(rec.json_line() + "\n")
            metrics.flush()
            log.info(
                "epoch %d step %d train_loss %.6f train_acc %.4f "
                "test_loss %.6f test_acc %.4f wall %.1fs",
                epoch, step, tr_loss, tr_acc, te_loss, te_acc, wall,
            )
            return te_acc

        test_acc = eval_event(0)
        if test_acc > best_acc:
            best_acc = test_acc
            save("best.ckpt")

        stop = False
        for epoch in range(1, cfg.epochs + 1):
            for start in range(0, cfg.train_count, cfg.batch):
                sl = slice(start, min(start + cfg.batch, cfg.train_count))
                tape = Tape()
                preds = forward_batch(tape, train_inputs[sl], config, params)
                if config.task == "regression":
                    loss = mse(tape, preds, train_targets[sl])
                else:
                    loss = cross_entropy(tape, preds, train_targets[sl])
                if not np.isfinite(loss.value):
                    raise RuntimeError(f"non-finite loss at step {step}")
                backward(loss, tape)
                adam_step(pvars, [p.grad for p in pvars], adam)
                zero_grads(pvars)
                step += 1
                steps_since_eval += 1
                if cfg.eval_interval and step % cfg.eval_interval == 0:
                    test_acc = eval_event(epoch)
                    if test_acc > best_acc:
                        best_acc = test_acc
                        save("best.ckpt")
                    if cfg.early_stop and test_acc == 1.0:
                        stop = True
                        break
            if stop:
                break
            if not cfg.eval_interval:
                test_acc = eval_event(epoch)
                if test_acc > best_acc:
                    best_acc = test_acc
                    save("best.ckpt")
                if cfg.early_stop and test_acc == 1.0:
                    break
        if steps_since_eval:
            test_acc = eval_event(epoch if cfg.epochs else 0)
            if test_acc > best_acc:
                best_acc = test_acc
                save("best.ckpt")

    save("final.ckpt")
    log.info("done: best test accuracy %.4f", best_acc)
    return 0


# --- eval -------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        config_dict, arrays = load_checkpoint(args.checkpoint)
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint not found: {e}") from e
    try:
        cfg = RunConfig(**config_dict)
        config = build_model_config(cfg)
        params = params_from_arrays(config, arrays)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"checkpoint/config mismatch: {e}") from e

    count = args.count if args.count is not None else cfg.test_count
    offset = args.offset if args.offset is not None else cfg.train_count
    seed = args.seed if args.seed is not None else cfg.seed
    if count < 1 or offset < 0:
        raise ConfigError("count must be >= 1 and offset >= 0")
    spec = DatasetSpec(task=cfg.task, n=cfg.n, count=offset + count, seed=seed)
    inputs, targets = _materialize(spec, np.arange(offset, offset + count))
    loss_v, acc = evaluate_arrays(config, params, inputs, targets)
    print(
        json.dumps(
            {
                "accuracy": acc,
                "count": count,
                "loss": loss_v,
                "n": cfg.n,
                "offset": offset,
                "seed": seed,
                "task": cfg.task,
            },
            sort_keys=True,
        )
    )
    return 0


# --- analyze ------------------------------------------------------------


def cmd_analyze(args: argparse.Namespace) -> int:
    merged = resolve_options(args)
    try:
        spec = ProtocolSpec(
            kind=merged["protocol"], n=merged["n"], k=merged["k"], m=merged["m"]
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    layout = build_layout(spec)
    ranks = [circulant_rank(set(factor_offsets(spec, m)), spec.n) for m in range(1, spec.m + 1)]
    report = {
        "kind": spec.kind.value,
        "n": spec.n,
        "k": spec.k,
        "m": spec.m,
        "stored_entries": stored_entries(spec),
        "complete": reachability_complete(layout),
        "rank": ranks[0],
    }
    if spec.kind.value == "CDIL":
        report["ranks"] = ranks
    flops_cfg = ModelConfig(
        task="regression",
        n=spec.n,
        d=merged["embed"],
        hidden=merged["hidden"],
        blocks=merged["blocks"],
        protocol=spec,
        input_mode="real_pair",
        pooling="FLAT",
        use_pos_embed=True,
    )
    report["multiplies"] = count_flops_estimate(flops_cfg)
    if args.dump_layout:
        export_layout(layout, args.dump_layout)
    if args.dump_dense:
        if spec.n > 256:
            raise ConfigError(f"dense dump limited to n <= 256, got {spec.n}")
        from .mixer import FactorBank, dense_attention_matrix

        bank = FactorBank(values=np.ones((spec.m, spec.n, spec.k)))
        dense = dense_attention_matrix(bank, layout)  # unit values: path counts
        with open(args.dump_dense, "w", newline="\n") as fh:
            for row in dense:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    print(json.dumps(report, sort_keys=True))
    return 0


# --- gendata -----------------------------------------------------------


def cmd_gendata(args: argparse.Namespace) -> int:
    merged = resolve_options(args)
    try:
        spec = DatasetSpec(
            task=merged["task"], n=merged["n"], count=merged["count"], seed=merged["seed"]
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.out is None:
        raise ConfigError("gendata needs --out FILE")
    write_samples(spec, args.out)
    print(
        json.dumps(
            {"count": spec.count, "n": spec.n, "path": str(args.out),
             "seed": spec.seed, "task": spec.task},
            sort_keys=True,
        )
    )
    return 0


# --- CLI wiring -----------------------------------------------------------


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="RNG seed (64-bit)")
    p.add_argument("--out", help="output directory (train) or file (gendata)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=["adding", "temporal_order"])
    p.add_argument("--protocol", choices=["CHORD", "CDIL"])
    p.add_argument("--n", type=int, help="sequence length")
    p.add_argument("--k", type=int, help="stored entries per row")
    p.add_argument("--m", type=int, help="factors in the chain")
    p.add_argument("--blocks", type=int, help="mixing blocks (L)")
    p.add_argument("--embed", type=int, help="embedding width d")
    p.add_argument("--hidden", type=int, help="MLP hidden width")
    p.add_argument("--vocab", type=int)
    p.add_argument("--pooling", choices=["FLAT", "CLS"])
    p.add_argument("--pos-embed", dest="pos_embed", action=argparse.BooleanOptionalAction)
    p.add_argument("--input-mode", dest="input_mode", choices=["token", "real_pair"])
    p.add_argument("--factor-input", dest="factor_input", choices=["initial", "previous"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainmix", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="train a model on a synthetic task")
    _add_shared(p_train)
    _add_model_flags(p_train)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--eval-interval", dest="eval_interval", type=int,
                         help="steps between evaluations; 0 = once per epoch")
    p_train.add_argument("--train-count", dest="train_count", type=int)
    p_train.add_argument("--test-count", dest="test_count", type=int)
    p_train.add_argument("--early-stop", dest="early_stop",
                         action=argparse.BooleanOptionalAction,
                         help="stop once test accuracy reaches 100%%")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_shared(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--count", type=int, help="samples to evaluate")
    p_eval.add_argument("--offset", type=int,
                        help="first sample index (default: past the train split)")

    p_an = sub.add_parser("analyze", help="structural report for a protocol")
    _add_shared(p_an)
    p_an.add_argument("--protocol", choices=["CHORD", "CDIL"])
    p_an.add_argument("--n", type=int)
    p_an.add_argument("--k", type=int)
    p_an.add_argument("--m", type=int)
    p_an.add_argument("--embed", type=int, help="width for multiply counts")
    p_an.add_argument("--hidden", type=int)
    p_an.add_argument("--blocks", type=int)
    p_an.add_argument("--dump-layout", dest="dump_layout", help="layout rows file")
    p_an.add_argument("--dump-dense", dest="dump_dense",
                      help="dense path-count matrix CSV (n <= 256)")

    p_gen = sub.add_parser("gendata", help="write samples as text")
    _add_shared(p_gen)
    p_gen.add_argument("--task", choices=["adding", "temporal_order"])
    p_gen.add_argument("--n", type=int)
    p_gen.add_argument("--count", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        if args.cmd == "train":
            cfg = resolve_run_config(args)
        elif args.cmd == "eval":
            cfg = None
        else:
            cfg = None
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        if args.cmd == "train":
            return cmd_train(cfg)
        if args.cmd == "eval":
            return cmd_eval(args)
        if args.cmd == "analyze":
            return cmd_analyze(args)
        return cmd_gendata(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:  # console script
    sys.exit(main())
