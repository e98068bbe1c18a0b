"""Acceptance gate: the nine release criteria, one test per criterion.

Each test prints a `criterion N: PASS` line with its measured numbers, so a
verbose run reads as a checklist. The desk-scale training criteria (6, 7)
run the real CLI at default hyperparameters and take a few CPU-minutes each;
everything else is fast.
"""

import json
import time

import numpy as np

from chainmix.harness import main
from chainmix.mixer import (
    FactorBank,
    apply_block,
    dense_attention_matrix,
    generate_factors,
    init_block,
)
from chainmix.network import ModelConfig, forward_batch, init_model, named_params
from chainmix.numerics import Tape, Var, backward, cross_entropy, mlp3, zero_grads
from chainmix.protocol import (
    ProtocolSpec,
    build_layout,
    circulant_rank,
    reachability_complete,
    stored_entries,
)

POWERS_OF_TWO = [4, 8, 16, 32, 64, 128, 256]
EPS_MACHINE = np.finfo(np.float64).eps


def svd_rank(matrix: np.ndarray) -> int:
    sv = np.linalg.svd(matrix, compute_uv=False)
    return int((sv > matrix.shape[0] * sv.max() * EPS_MACHINE).sum())


def dense_factor(columns_slice: np.ndarray, values_slice: np.ndarray) -> np.ndarray:
    n = columns_slice.shape[0]
    w = np.zeros((n, n))
    np.add.at(w, (np.arange(n)[:, None], columns_slice), values_slice)
    return w


# --- 1: sparse chain equals its dense reconstruction ---------------------------


def test_criterion_1_oracle_equivalence():
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(20):
        for kind in ("CHORD", "CDIL"):
            for n in (8, 16, 64):
                for d in (4, 8):
                    rng = np.random.default_rng((seed, n, d, kind == "CDIL"))
                    layout = build_layout(ProtocolSpec(kind=kind, n=n))
                    params = init_block(rng, layout, d, hidden=8)
                    x0 = rng.standard_normal((n, d))
                    x_prev = rng.standard_normal((n, d))
                    out = apply_block(None, x_prev, x0, params).value
                    bank = generate_factors(x0, params)
                    dense = dense_attention_matrix(bank, layout)
                    values = mlp3(None, Var(x_prev), params.value_mlp).value
                    expected = dense @ values
                    rel = np.abs(out - expected).max() / np.abs(expected).max()
                    worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    assert worst < 1e-10, f"worst relative error {worst:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"criterion 1: PASS — 240 cases, worst rel {worst:.2e}, {elapsed:.1f}s")


# --- 2: analytic gradients match finite differences -----------------------------


def test_criterion_2_gradient_correctness():
    t0 = time.monotonic()
    eps = 1e-5
    worst_by_combo = {}
    for kind in ("CHORD", "CDIL"):
        for pooling in ("FLAT", "CLS"):
            config = ModelConfig(
                task="classification", n=16, d=4, hidden=4, blocks=2,
                protocol=ProtocolSpec(kind=kind, n=16), num_classes=4,
                vocab=6, pooling=pooling, input_mode="token",
            )
            params = init_model(config, 0)
            rng = np.random.default_rng(1)
            length = 15 if pooling == "CLS" else 16
            inputs = rng.integers(0, 5, size=(2, length))
            labels = np.array([0, 3])

            def loss_value() -> float:
                out = forward_batch(None, inputs, config, params)
                return float(cross_entropy(None, out, labels).value)

            named = named_params(config, params)
            tape = Tape()
            loss = cross_entropy(tape, forward_batch(tape, inputs, config, params), labels)
            backward(loss, tape)

            worst = 0.0
            for name, var in named:
                analytic = np.zeros_like(var.value) if var.grad is None else var.grad.copy()
                flat = var.value.reshape(-1)
                fd = np.zeros(flat.shape)
                for i in range(flat.size):
                    keep = flat[i]
                    flat[i] = keep + eps
                    hi = loss_value()
                    flat[i] = keep - eps
                    lo = loss_value()
                    flat[i] = keep
                    fd[i] = (hi - lo) / (2 * eps)
                fd = fd.reshape(var.value.shape)
                bound = np.maximum(1e-8, 1e-4 * np.maximum(np.abs(analytic), np.abs(fd)))
                gap = np.abs(analytic - fd)
                spot = np.unravel_index(gap.argmax(), gap.shape)
                assert (gap <= bound).all(), (
                    f"{kind}/{pooling} tensor {name}: gap {gap[spot]:.3e} "
                    f"exceeds bound {bound[spot]:.3e} at {spot}"
                )
                scale = np.maximum(np.abs(analytic), np.abs(fd))
                rel = gap[scale > 1e-4] / scale[scale > 1e-4]
                if rel.size:
                    worst = max(worst, float(rel.max()))
            zero_grads([v for _, v in named])
            worst_by_combo[f"{kind}/{pooling}"] = worst
    elapsed = time.monotonic() - t0
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    summary = ", ".join(f"{k} {v:.1e}" for k, v in worst_by_combo.items())
    print(f"criterion 2: PASS — worst rel by combo: {summary}, {elapsed:.1f}s")


# --- 3: chain support covers every (i, j) pair ------------------------------------


def test_criterion_3_completeness():
    for n in POWERS_OF_TWO:
        chord = build_layout(ProtocolSpec(kind="CHORD", n=n))
        assert reachability_complete(chord), f"CHORD defaults incomplete at n={n}"
        cdil = build_layout(ProtocolSpec(kind="CDIL", n=n))
        assert cdil.spec.k == 3
        assert reachability_complete(cdil), f"CDIL defaults incomplete at n={n}"
    narrow = build_layout(ProtocolSpec(kind="CHORD", n=16, k=4))
    assert not reachability_complete(narrow), "K = log2 N should fall one link short"
    print(f"criterion 3: PASS — complete for n in {POWERS_OF_TWO}, narrow n=16 incomplete")


# --- 4: factors and their product are full rank -----------------------------------


def test_criterion_4_full_rank():
    for n in (8, 16, 32):
        layout = build_layout(ProtocolSpec(kind="CHORD", n=n))
        spec = layout.spec
        for seed in range(20):
            rng = np.random.default_rng((seed, n))
            values = rng.uniform(0.1, 1.0, size=(spec.m, spec.n, spec.k))
            product = np.eye(n)
            for m in range(spec.m):
                factor = dense_factor(layout.columns[m], values[m])
                assert svd_rank(factor) == n, f"factor {m} rank-deficient at n={n}"
                product = product @ factor
            assert svd_rank(product) == n, f"product rank-deficient at n={n} seed={seed}"

    for offsets, expected in (({0, 1, 2, 4, 8}, 16), ({0, 1, 2, 3}, 13)):
        got = circulant_rank(offsets, 16)
        circ = np.zeros((16, 16))
        for i in range(16):
            for o in offsets:
                circ[i, (i + o) % 16] = 1.0
        oracle = svd_rank(circ)
        assert got == expected == oracle, f"offsets {sorted(offsets)}: {got} vs svd {oracle}"
    print("criterion 4: PASS — 60 factor banks full rank; circulant ranks 16 and 13 match svd")


# --- 5: stored-entry accounting -----------------------------------------------------


def test_criterion_5_storage_law():
    for n in POWERS_OF_TWO:
        spec = ProtocolSpec(kind="CHORD", n=n)
        layout = build_layout(spec)
        allocated = layout.columns.size
        bank = FactorBank(values=np.zeros((spec.m, spec.n, spec.k)))
        assert stored_entries(spec) == allocated == bank.values.size
        log_n = n.bit_length() - 1
        assert stored_entries(spec) == n * log_n * (log_n + 1)
    for n in POWERS_OF_TWO:
        spec = ProtocolSpec(kind="CDIL", n=n)
        assert stored_entries(spec) == build_layout(spec).columns.size
    print(f"criterion 5: PASS — allocation matches N·log2N·(log2N+1) for n in {POWERS_OF_TWO}")


# --- 8: mixing escapes the convex hull softmax is bound to -------------------------


def test_criterion_8_convex_hull_contrast():
    # factor MLPs emit a constant row [2, 0, 0]: every factor is 2·I, so the
    # chain is exactly 4·I and each output row is a scaled value row.
    layout = build_layout(ProtocolSpec(kind="CHORD", n=3))
    rng = np.random.default_rng(8)
    params = init_block(rng, layout, d=4, hidden=4)
    for fp in params.factor_mlps:
        fp.w1.value[:] = 0.0
        fp.b1.value[:] = 0.0
        fp.w2.value[:] = 0.0
        fp.b2.value[:] = [2.0, 0.0, 0.0]
    x_prev = rng.standard_normal((3, 4)) * 3.0
    x0 = rng.standard_normal((3, 4))

    dense = dense_attention_matrix(generate_factors(x0, params), layout)
    assert np.array_equal(dense, 4.0 * np.eye(3))

    value_rows = mlp3(None, Var(x_prev), params.value_mlp).value
    out = apply_block(None, x_prev, x0, params).value
    assert np.allclose(out, 4.0 * value_rows, atol=1e-12)

    lo, hi = value_rows.min(axis=0), value_rows.max(axis=0)
    escaped = ((out > hi + 1e-9) | (out < lo - 1e-9)).any(axis=1)
    assert escaped.all(), "every mixed row should leave the value-row hull"

    # softmax reference: rows are convex weights, so its outputs cannot leave
    from chainmix.network import attention_weights, reference_attention

    for seed in range(20):
        r = np.random.default_rng(seed)
        x = r.standard_normal((6, 4)) * 2.0
        wq, wk, wv = (r.standard_normal((4, 4)) for _ in range(3))
        weights = attention_weights(x, wq, wk)
        assert np.abs(weights.sum(axis=1) - 1.0).max() < 1e-12
        assert weights.min() >= 0.0
        v = x @ wv
        ref = reference_attention(x, wq, wk, wv)
        assert (ref <= v.max(axis=0) + 1e-9).all()
        assert (ref >= v.min(axis=0) - 1e-9).all()
    print("criterion 8: PASS — 4·I chain exits the hull on all rows; softmax rows sum to 1")


# --- 9: bitwise-reproducible training ------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    flags = ["--task", "adding", "--n", "8", "--embed", "4", "--hidden", "4",
             "--train-count", "60", "--test-count", "20", "--batch", "10",
             "--epochs", "2", "--seed", "11"]
    out1, out2 = tmp_path / "first", tmp_path / "second"
    assert main(["train", *flags, "--out", str(out1)]) == 0
    assert main(["train", *flags, "--out", str(out2)]) == 0
    bytes1 = (out1 / "metrics.jsonl").read_bytes()
    bytes2 = (out2 / "metrics.jsonl").read_bytes()
    assert bytes1 == bytes2
    print(f"criterion 9: PASS — {len(bytes1)} metric bytes identical across same-seed runs")


# --- 6 and 7: desk-scale task accuracy inside the CPU budget -------------------------


def run_desk_scale(tmp_path, task: str, epochs: int) -> tuple[float, float]:
    out = tmp_path / task
    cpu0 = time.process_time()
    rc = main(["train", "--task", task, "--epochs", str(epochs), "--out", str(out)])
    cpu_minutes = (time.process_time() - cpu0) / 60.0
    assert rc == 0
    records = [json.loads(s) for s in (out / "metrics.jsonl").read_text().splitlines()]
    best = max(r["accuracy"] for r in records if r["split"] == "test")
    return best, cpu_minutes


def test_criterion_6_adding_desk_scale(tmp_path):
    best, cpu_minutes = run_desk_scale(tmp_path, "adding", epochs=14)
    assert cpu_minutes < 30.0, f"budget blown: {cpu_minutes:.1f} CPU-minutes"
    assert best >= 0.99, f"best test accuracy {best:.4f}"
    print(f"criterion 6: PASS — adding best test acc {best:.4f} in {cpu_minutes:.1f} CPU-min")


def test_criterion_7_temporal_order_desk_scale(tmp_path):
    best, cpu_minutes = run_desk_scale(tmp_path, "temporal_order", epochs=6)
    assert cpu_minutes < 30.0, f"budget blown: {cpu_minutes:.1f} CPU-minutes"
    assert best >= 0.97, f"best test accuracy {best:.4f}"
    print(f"criterion 7: PASS — temporal_order best test acc {best:.4f} in {cpu_minutes:.1f} CPU-min")
