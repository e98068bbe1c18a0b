"""Sparse link protocols: deterministic factor layouts and their analysis.

A protocol places K stored entries in each row of M square N x N factors.
Two placements are supported:

* CHORD links row i to itself and to i + 2**(k-2) (mod N) for k = 2..K,
  the same pattern in every factor.
* CDIL links row i to itself and symmetrically to i +/- p * 2**(m-1)
  (mod N) for p = 1..(K-1)//2, with the dilation doubling per factor.

Besides building layouts, this module answers the structural questions that
matter for a factor chain: whether the chained pattern reaches every
position from every position (receptive-field completeness), how many
entries are stored, and the exact rank of a factor's binary circulant
pattern. The rank comes from rank = N - deg(gcd(f(x), x^N - 1)) where
f(x) = sum_{o in offsets} x^o, computed with fraction-free integer
arithmetic so no floating-point threshold is involved.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable

import numpy as np

__all__ = [
    "ProtocolKind",
    "ProtocolSpec",
    "SparseLayout",
    "LayoutWarning",
    "chord_columns",
    "cdil_columns",
    "build_layout",
    "factor_offsets",
    "reachability_complete",
    "circulant_rank",
    "stored_entries",
    "export_layout",
]


class ProtocolKind(str, Enum):
    CHORD = "CHORD"
    CDIL = "CDIL"


class LayoutWarning(UserWarning):
    """A legal but degenerate layout, e.g. duplicate columns within a row."""


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


@dataclass(frozen=True)
class ProtocolSpec:
    """Which protocol, at what size.

    n is the sequence length (factors are n x n). k is the number of stored
    entries per row including the self link; m is the number of factors in
    the chain. Unset k/m resolve to defaults that keep the chain complete
    at power-of-two n: m = ceil(log2 n), CHORD k = ceil(log2 n) + 1,
    CDIL k = 3.
    """

    kind: ProtocolKind
    n: int
    k: int | None = None
    m: int | None = None

    def __post_init__(self) -> None:
        kind = ProtocolKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        m = self.m if self.m is not None else _ceil_log2(self.n)
        if self.k is not None:
            k = self.k
        elif kind is ProtocolKind.CHORD:
            k = _ceil_log2(self.n) + 1
        else:
            k = 3
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if kind is ProtocolKind.CHORD and k < 2:
            raise ValueError(f"CHORD needs k >= 2, got {k}")
        if kind is ProtocolKind.CDIL and (k < 3 or k % 2 == 0):
            raise ValueError(f"CDIL needs odd k >= 3, got {k}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class SparseLayout:
    """Fixed column indices for every stored entry: columns[m][i][k]."""

    spec: ProtocolSpec
    columns: np.ndarray  # (m, n, k) int64, read-only

    def __post_init__(self) -> None:
        expected = (self.spec.m, self.spec.n, self.spec.k)
        if self.columns.shape != expected:
            raise ValueError(
                f"columns shape {self.columns.shape} does not match spec {expected}"
            )


def factor_offsets(spec: ProtocolSpec, m: int) -> tuple[int, ...]:
    """Column offsets (relative to the row index, mod n) of factor m in 1..M.

    The self link (offset 0) comes first; the rest follow the protocol's
    generation order. Offsets are reduced mod n and may repeat when a raw
    offset wraps onto another.
    """
    if not 1 <= m <= spec.m:
        raise ValueError(f"factor index {m} outside 1..{spec.m}")
    if spec.kind is ProtocolKind.CHORD:
        return (0,) + tuple((1 << (k - 2)) % spec.n for k in range(2, spec.k + 1))
    half = (spec.k - 1) // 2
    signed = list(range(1, half + 1)) + [-p for p in range(1, half + 1)]
    dil = 1 << (m - 1)
    return (0,) + tuple((p * dil) % spec.n for p in signed)


def chord_columns(i: int, spec: ProtocolSpec) -> np.ndarray:
    """Columns of row i under CHORD: [i, i+1, i+2, i+4, ...] mod n."""
    if spec.kind is not ProtocolKind.CHORD:
        raise ValueError(f"spec kind is {spec.kind.value}, not CHORD")
    if not 0 <= i < spec.n:
        raise ValueError(f"row {i} outside [0, {spec.n})")
    if 1 << (spec.k - 2) >= spec.n:
        warnings.warn(
            f"largest CHORD offset 2**{spec.k - 2} wraps past n={spec.n}; "
            "rows will contain duplicate columns",
            LayoutWarning,
            stacklevel=2,
        )
    cols = [i] + [(i + (1 << (k - 2))) % spec.n for k in range(2, spec.k + 1)]
    return np.asarray(cols, dtype=np.int64)


def cdil_columns(i: int, m: int, spec: ProtocolSpec) -> np.ndarray:
    """Columns of row i in CDIL factor m: self plus +-p * 2**(m-1) mod n."""
    if spec.kind is not ProtocolKind.CDIL:
        raise ValueError(f"spec kind is {spec.kind.value}, not CDIL")
    if not 0 <= i < spec.n:
        raise ValueError(f"row {i} outside [0, {spec.n})")
    offsets = factor_offsets(spec, m)
    return np.asarray([(i + o) % spec.n for o in offsets], dtype=np.int64)


def build_layout(spec: ProtocolSpec) -> SparseLayout:
    """Materialize all column indices for the factor chain.

    CHORD repeats one per-row pattern across all m factors; CDIL doubles the
    dilation per factor. The returned array is read-only so a layout can be
    shared freely between blocks and threads.
    """
    rows = np.arange(spec.n, dtype=np.int64)[:, None]
    slices = []
    for m in range(1, spec.m + 1):
        offs = np.asarray(factor_offsets(spec, m), dtype=np.int64)[None, :]
        slices.append((rows + offs) % spec.n)
        if spec.kind is ProtocolKind.CHORD:
            # identical in every factor; no need to recompute
            slices.extend(slices[0] for _ in range(spec.m - 1))
            break
    if spec.kind is ProtocolKind.CHORD and 1 << (spec.k - 2) >= spec.n:
        warnings.warn(
            f"largest CHORD offset 2**{spec.k - 2} wraps past n={spec.n}; "
            "rows will contain duplicate columns",
            LayoutWarning,
            stacklevel=2,
        )
    columns = np.stack(slices)
    columns.setflags(write=False)
    return SparseLayout(spec=spec, columns=columns)


def stored_entries(spec: ProtocolSpec) -> int:
    """Number of stored values in the whole chain: m * n * k."""
    return spec.m * spec.n * spec.k


def reachability_complete(layout: SparseLayout) -> bool:
    """True iff every position can influence every position through the chain.

    Uses the boolean product of the factor adjacency patterns, taken in
    application order (the last factor touches the values first, so the
    combined pattern is factor 1 * factor 2 * ... * factor M; for the
    0/1 question the order only matters when slices differ).
    """
    n = layout.spec.n
    adj = []
    for cols in layout.columns:
        a = np.zeros((n, n), dtype=np.int64)
        a[np.arange(n)[:, None], cols] = 1
        adj.append(a)
    reach = adj[0]
    for a in adj[1:]:
        reach = (reach @ a > 0).astype(np.int64)
    return bool((reach > 0).all())


# --- exact circulant rank -------------------------------------------------
#
# The binary pattern of one factor row, rotated through all n rows, is a
# circulant matrix C with associated polynomial f(x) = sum_o x^o. Its rank
# is n - deg(gcd(f(x), x^n - 1)) over the rationals. The gcd runs on plain
# Python integers with content removal each step (primitive pseudo-remainder
# sequence), so the result is exact at any size.


def _trim(c: list[int]) -> list[int]:
    while c and c[-1] == 0:
        c.pop()
    return c


def _content(c: list[int]) -> int:
    g = 0
    for x in c:
        g = math.gcd(g, x)
    return g


def _primitive(c: list[int]) -> list[int]:
    g = _content(c)
    if g > 1:
        c = [x // g for x in c]
    return c


def _pseudo_rem(a: list[int], b: list[int]) -> list[int]:
    """Remainder of lc(b)^t * a divided by b, all-integer. a, b trimmed."""
    r = list(a)
    db = len(b) - 1
    lb = b[-1]
    while len(r) - 1 >= db and r:
        dr = len(r) - 1
        lead = r[-1]
        r = [lb * c for c in r]
        q = lead  # leading coeff of scaled r divided by lb
        for j in range(db + 1):
            r[j + dr - db] -= q * b[j]
        r = _trim(r)
    return r


def _gcd_degree(f: list[int], g: list[int]) -> int:
    a, b = _trim(list(f)), _trim(list(g))
    if not a:
        return len(b) - 1
    if not b:
        return len(a) - 1
    if len(a) < len(b):
        a, b = b, a
    while b:
        r = _primitive(_pseudo_rem(a, b))
        a, b = b, r
    return len(a) - 1


def circulant_rank(offsets: Iterable[int], n: int) -> int:
    """Exact rank of the n x n binary circulant with ones at the offsets.

    offsets are the distinct column offsets of one row (self link included as
    offset 0); each must lie in [0, n). The polynomial f(x) has unit
    coefficients, one term per offset.
    """
    offs = sorted(set(int(o) for o in offsets))
    if not offs:
        raise ValueError("offsets must be nonempty")
    if offs[0] < 0 or offs[-1] >= n:
        raise ValueError(f"offsets must lie in [0, {n})")
    f = [0] * (offs[-1] + 1)
    for o in offs:
        f[o] = 1
    g = [0] * (n + 1)
    g[0], g[n] = -1, 1
    return n - _gcd_degree(f, g)


def export_layout(layout: SparseLayout, dest: str | IO[str]) -> None:
    """Write a layout as one JSON header line plus `m,i,k,column` rows.

    Ordering is m-major, then row, then slot, so the bytes are stable for a
    given spec. Indices are 0-based.
    """
    spec = layout.spec
    header = json.dumps(
        {"kind": spec.kind.value, "N": spec.n, "K": spec.k, "M": spec.m}
    )

    def _write(fh: IO[str]) -> None:
        fh.write(header + "\n")
        for m in range(spec.m):
            for i in range(spec.n):
                for k in range(spec.k):
                    fh.write(f"{m},{i},{k},{layout.columns[m, i, k]}\n")

    if isinstance(dest, str):
        with open(dest, "w", newline="\n") as fh:
            _write(fh)
    else:
        _write(dest)
