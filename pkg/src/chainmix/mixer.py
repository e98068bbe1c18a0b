"""The mixing block: data-dependent sparse factors chained over value rows.

A block never materializes its N x N mixing matrix. Each factor m keeps K
entries per row, produced by a small MLP from the corresponding row of the
block's conditioning input (by default the encoded input X0), and the chain
is applied to V = g(X_prev) from the last factor inward:

    out = W1 * (W2 * (... * (WM * V)))

so the dense equivalent is the left-to-right product W1 W2 ... WM. Entries
are unconstrained: rows need not be nonnegative or sum to one, which lets a
mixed row leave the convex hull of the value rows. dense_attention_matrix
exists only as an oracle/analysis path; it scatters a factor bank into
dense matrices and multiplies them in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import MlpParams, Tape, Var, init_mlp, mlp3, sparse_mix
from .protocol import SparseLayout

__all__ = [
    "FactorBank",
    "MixerBlockParams",
    "init_block",
    "generate_factors",
    "factor_vars",
    "apply_block",
    "dense_attention_matrix",
]


@dataclass
class FactorBank:
    """Plain snapshot of one block's factor entries: values[m][i][k]."""

    values: np.ndarray  # (m, n, k) float64


@dataclass
class MixerBlockParams:
    """One block: the shared layout plus its factor and value MLPs.

    factor_mlps[m] maps a d-wide conditioning row to the K entries of row i
    in factor m+1; value_mlp (g) maps a d-wide input row to a d-wide value
    row.
    """

    layout: SparseLayout
    factor_mlps: list[MlpParams]
    value_mlp: MlpParams

    def __post_init__(self) -> None:
        spec = self.layout.spec
        if len(self.factor_mlps) != spec.m:
            raise ValueError(
                f"need {spec.m} factor MLPs, got {len(self.factor_mlps)}"
            )
        for p in self.factor_mlps:
            if p.w2.value.shape[1] != spec.k:
                raise ValueError(
                    f"factor MLP emits {p.w2.value.shape[1]} entries, layout has k={spec.k}"
                )

    def vars(self) -> list[Var]:
        out: list[Var] = []
        for p in self.factor_mlps:
            out.extend(p.vars())
        out.extend(self.value_mlp.vars())
        return out


def init_block(
    rng: np.random.Generator, layout: SparseLayout, d: int, hidden: int
) -> MixerBlockParams:
    spec = layout.spec
    return MixerBlockParams(
        layout=layout,
        factor_mlps=[init_mlp(rng, d, hidden, spec.k) for _ in range(spec.m)],
        value_mlp=init_mlp(rng, d, hidden, d),
    )


def factor_vars(tape: Tape | None, x0: Var, params: MixerBlockParams) -> list[Var]:
    """Factor entries as graph nodes, one (..., n, k) Var per factor."""
    return [mlp3(tape, x0, p) for p in params.factor_mlps]


def generate_factors(x0, params: MixerBlockParams) -> FactorBank:
    """Snapshot the factor entries for a single (n, d) conditioning input."""
    x = x0 if isinstance(x0, Var) else Var(x0)
    if x.value.ndim != 2:
        raise ValueError(f"expected a single (n, d) input, got {x.value.shape}")
    vals = [v.value for v in factor_vars(None, x, params)]
    return FactorBank(values=np.stack(vals))


def apply_block(tape: Tape | None, x_prev, x0, params: MixerBlockParams) -> Var:
    """Mix value rows V = g(x_prev) through the factor chain.

    x_prev and x0 are (..., n, d); factors come from x0 (or whatever
    conditioning input the caller passes), values from x_prev. The last
    factor is applied first.
    """
    x_prev = x_prev if isinstance(x_prev, Var) else Var(x_prev)
    x0 = x0 if isinstance(x0, Var) else Var(x0)
    n = params.layout.spec.n
    if x_prev.value.shape[-2] != n or x0.value.shape[-2] != n:
        raise ValueError(
            f"inputs must have {n} rows, got {x_prev.value.shape} and {x0.value.shape}"
        )
    banks = factor_vars(tape, x0, params)
    out = mlp3(tape, x_prev, params.value_mlp)
    for m in range(params.layout.spec.m - 1, -1, -1):
        out = sparse_mix(tape, banks[m], params.layout.columns[m], out)
    return out


def dense_attention_matrix(bank: FactorBank, layout: SparseLayout) -> np.ndarray:
    """Dense equivalent W1 @ W2 @ ... @ WM of a factor bank; oracle path.

    Duplicate columns within a row accumulate, matching sparse_mix.
    """
    spec = layout.spec
    expected = (spec.m, spec.n, spec.k)
    if bank.values.shape != expected:
        raise ValueError(f"bank shape {bank.values.shape} != layout shape {expected}")
    rows = np.arange(spec.n)[:, None]
    mats = []
    for m in range(spec.m):
        w = np.zeros((spec.n, spec.n))
        np.add.at(w, (np.broadcast_to(rows, layout.columns[m].shape), layout.columns[m]), bank.values[m])
        mats.append(w)
    a = mats[0]
    for w in mats[1:]:
        a = a @ w
    return a
