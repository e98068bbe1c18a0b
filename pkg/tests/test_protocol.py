"""Layout construction, reachability, and exact circulant rank."""

import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainmix.protocol import (
    LayoutWarning,
    ProtocolKind,
    ProtocolSpec,
    SparseLayout,
    build_layout,
    cdil_columns,
    chord_columns,
    circulant_rank,
    export_layout,
    factor_offsets,
    reachability_complete,
    stored_entries,
)

POWERS_OF_TWO = [4, 8, 16, 32, 64, 128, 256]


# --- defaults and validation ----------------------------------------------


def test_chord_defaults_at_powers_of_two():
    for n in POWERS_OF_TWO:
        spec = ProtocolSpec(kind=ProtocolKind.CHORD, n=n)
        log2n = n.bit_length() - 1
        assert spec.m == log2n
        assert spec.k == log2n + 1


def test_cdil_defaults():
    spec = ProtocolSpec(kind=ProtocolKind.CDIL, n=64)
    assert spec.k == 3
    assert spec.m == 6


def test_kind_accepts_plain_strings():
    spec = ProtocolSpec(kind="CHORD", n=8)
    assert spec.kind is ProtocolKind.CHORD


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="CHORD", n=1),
        dict(kind="CHORD", n=8, m=0),
        dict(kind="CHORD", n=8, k=1),
        dict(kind="CDIL", n=8, k=2),
        dict(kind="CDIL", n=8, k=1),
    ],
)
def test_spec_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        ProtocolSpec(**kwargs)


def test_layout_shape_must_match_spec():
    spec = ProtocolSpec(kind="CHORD", n=4)
    with pytest.raises(ValueError):
        SparseLayout(spec=spec, columns=np.zeros((1, 4, 2), dtype=np.int64))


# --- frozen row examples ---------------------------------------------------


def test_chord_row_zero_n16():
    spec = ProtocolSpec(kind="CHORD", n=16, k=5)
    assert chord_columns(0, spec).tolist() == [0, 1, 2, 4, 8]


def test_chord_row_wraps_mod_n():
    spec = ProtocolSpec(kind="CHORD", n=16, k=5)
    assert chord_columns(15, spec).tolist() == [15, 0, 1, 3, 7]


def test_chord_smallest_legal_case():
    spec = ProtocolSpec(kind="CHORD", n=2, k=2, m=1)
    assert chord_columns(0, spec).tolist() == [0, 1]
    layout = build_layout(spec)
    assert layout.columns.tolist() == [[[0, 1], [1, 0]]]


def test_cdil_row_zero_first_factor():
    spec = ProtocolSpec(kind="CDIL", n=16, k=3)
    assert cdil_columns(0, 1, spec).tolist() == [0, 1, 15]


def test_cdil_row_five_n8():
    spec = ProtocolSpec(kind="CDIL", n=8, k=3)
    assert cdil_columns(5, 1, spec).tolist() == [5, 6, 4]


def test_cdil_dilation_doubles_per_factor():
    spec = ProtocolSpec(kind="CDIL", n=16, k=3, m=4)
    for m in range(1, 5):
        dil = 1 << (m - 1)
        assert cdil_columns(0, m, spec).tolist() == [0, dil % 16, (16 - dil) % 16]


def test_cdil_wider_row():
    # k=5 keeps p = 1, 2 then -1, -2; dilation 2 in the second factor
    spec = ProtocolSpec(kind="CDIL", n=16, k=5, m=4)
    assert cdil_columns(0, 2, spec).tolist() == [0, 2, 4, 14, 12]


def test_row_index_validated():
    spec = ProtocolSpec(kind="CHORD", n=16)
    with pytest.raises(ValueError):
        chord_columns(16, spec)
    cspec = ProtocolSpec(kind="CDIL", n=16)
    with pytest.raises(ValueError):
        cdil_columns(-1, 1, cspec)
    with pytest.raises(ValueError):
        factor_offsets(cspec, 0)
    with pytest.raises(ValueError):
        factor_offsets(cspec, cspec.m + 1)


def test_kind_mismatch_rejected():
    chord = ProtocolSpec(kind="CHORD", n=16)
    cdil = ProtocolSpec(kind="CDIL", n=16)
    with pytest.raises(ValueError):
        cdil_columns(0, 1, chord)
    with pytest.raises(ValueError):
        chord_columns(0, cdil)


# --- layout structure -------------------------------------------------------


def test_chord_layout_identical_across_factors():
    layout = build_layout(ProtocolSpec(kind="CHORD", n=32))
    for m in range(1, layout.spec.m):
        assert np.array_equal(layout.columns[m], layout.columns[0])


def test_layout_is_read_only_and_deterministic():
    spec = ProtocolSpec(kind="CDIL", n=32)
    a = build_layout(spec)
    b = build_layout(spec)
    assert np.array_equal(a.columns, b.columns)
    with pytest.raises(ValueError):
        a.columns[0, 0, 0] = 7


def test_wrapping_chord_offset_warns():
    spec = ProtocolSpec(kind="CHORD", n=8, k=5)  # largest offset 8 wraps to 0
    with pytest.warns(LayoutWarning):
        cols = chord_columns(0, spec)
    assert len(set(cols.tolist())) < spec.k  # duplicate columns in the row
    with pytest.warns(LayoutWarning):
        build_layout(spec)


def test_normal_layouts_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_layout(ProtocolSpec(kind="CHORD", n=16))
        build_layout(ProtocolSpec(kind="CDIL", n=16))


@given(
    n=st.sampled_from([4, 8, 16, 32, 64]),
    kind=st.sampled_from([ProtocolKind.CHORD, ProtocolKind.CDIL]),
)
@settings(max_examples=30, deadline=None)
def test_layout_properties(n, kind):
    spec = ProtocolSpec(kind=kind, n=n)
    layout = build_layout(spec)
    cols = layout.columns
    assert cols.shape == (spec.m, spec.n, spec.k)
    assert cols.dtype == np.int64
    assert cols.min() >= 0 and cols.max() < n
    # self link first in every row of every factor
    assert np.array_equal(cols[:, :, 0], np.tile(np.arange(n), (spec.m, 1)))
    # every slice is a circulant: row i is row 0 shifted by i
    for m in range(spec.m):
        expected = (cols[m, 0][None, :] + np.arange(n)[:, None]) % n
        assert np.array_equal(cols[m], expected)


def test_factor_offsets_match_layout():
    for kind in ("CHORD", "CDIL"):
        spec = ProtocolSpec(kind=kind, n=32)
        layout = build_layout(spec)
        for m in range(1, spec.m + 1):
            offs = np.asarray(factor_offsets(spec, m), dtype=np.int64)
            assert np.array_equal(layout.columns[m - 1, 0], offs % 32)


# --- storage accounting -----------------------------------------------------


def test_stored_entries_law():
    assert stored_entries(ProtocolSpec(kind="CHORD", n=2, k=2, m=1)) == 4
    assert stored_entries(ProtocolSpec(kind="CHORD", n=16)) == 320
    for n in POWERS_OF_TWO:
        spec = ProtocolSpec(kind="CHORD", n=n)
        log2n = n.bit_length() - 1
        assert stored_entries(spec) == n * log2n * (log2n + 1)
        assert stored_entries(spec) == build_layout(spec).columns.size


# --- reachability ------------------------------------------------------------


def _reachable_sets(layout):
    """Independent oracle: propagate reachable-input sets through the chain.

    The last factor touches the values first, so sets compose from factor M
    backwards: after the full chain, row i of the result holds every input
    position that can influence output i.
    """
    n = layout.spec.n
    reach = [{j} for j in range(n)]
    for cols in layout.columns[::-1]:
        reach = [set().union(*(reach[j] for j in row)) for row in cols.tolist()]
    return reach


def test_reachability_matches_set_oracle():
    cases = [
        ProtocolSpec(kind="CHORD", n=16),
        ProtocolSpec(kind="CHORD", n=16, k=4),
        ProtocolSpec(kind="CHORD", n=16, k=3, m=2),
        ProtocolSpec(kind="CDIL", n=16),
        ProtocolSpec(kind="CDIL", n=16, m=2),
        ProtocolSpec(kind="CDIL", n=12, k=3),
    ]
    for spec in cases:
        layout = build_layout(spec)
        oracle = all(len(s) == spec.n for s in _reachable_sets(layout))
        assert reachability_complete(layout) == oracle, spec


def test_default_chains_complete_at_powers_of_two():
    for n in POWERS_OF_TWO:
        for kind in ("CHORD", "CDIL"):
            layout = build_layout(ProtocolSpec(kind=kind, n=n))
            assert reachability_complete(layout), (kind, n)


def test_one_fewer_chord_link_breaks_completeness():
    # dropping the widest link (k = log2 n instead of log2 n + 1) cannot
    # cover the farthest residue within m = log2 n hops
    layout = build_layout(ProtocolSpec(kind="CHORD", n=16, k=4))
    assert not reachability_complete(layout)
    assert not all(len(s) == 16 for s in _reachable_sets(layout))


def test_single_factor_n2_complete():
    layout = build_layout(ProtocolSpec(kind="CHORD", n=2, k=2, m=1))
    assert reachability_complete(layout)


# --- exact circulant rank ----------------------------------------------------


def test_rank_identity_pattern():
    assert circulant_rank({0}, 8) == 8


def test_rank_consecutive_offsets_deficient():
    assert circulant_rank({0, 1, 2, 3}, 16) == 13


def test_rank_power_offsets_full():
    assert circulant_rank({0, 1, 2, 4, 8}, 16) == 16


def test_rank_all_ones_pattern():
    # f(x) = 1 + x + ... + x^(n-1) shares all of x^n - 1 except (x - 1)
    assert circulant_rank(set(range(8)), 8) == 1


def test_rank_input_validation():
    with pytest.raises(ValueError):
        circulant_rank(set(), 8)
    with pytest.raises(ValueError):
        circulant_rank({8}, 8)
    with pytest.raises(ValueError):
        circulant_rank({-1}, 8)


def _dense_circulant(offsets, n):
    c = np.zeros((n, n))
    for i in range(n):
        for o in offsets:
            c[i, (i + o) % n] = 1.0
    return c


def test_rank_matches_svd_oracle_on_random_patterns():
    rng = np.random.default_rng(1234)
    for case in range(25):
        n = int(rng.integers(2, 33))
        size = int(rng.integers(1, n + 1))
        offsets = set(rng.choice(n, size=size, replace=False).tolist())
        exact = circulant_rank(offsets, n)
        numeric = int(np.linalg.matrix_rank(_dense_circulant(offsets, n)))
        assert exact == numeric, (n, sorted(offsets))


def test_rank_frozen_values_match_svd_oracle():
    for offsets, n, expected in [
        ({0, 1, 2, 4, 8}, 16, 16),
        ({0, 1, 2, 3}, 16, 13),
        ({0}, 8, 8),
    ]:
        assert circulant_rank(offsets, n) == expected
        assert int(np.linalg.matrix_rank(_dense_circulant(offsets, n))) == expected


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_rank_properties(data):
    n = data.draw(st.integers(min_value=2, max_value=24))
    offsets = data.draw(
        st.sets(st.integers(min_value=0, max_value=n - 1), min_size=1, max_size=n)
    )
    r = circulant_rank(offsets, n)
    assert 1 <= r <= n
    # shifting every offset by a constant rotates the matrix: rank unchanged
    shifted = {(o + 1) % n for o in offsets}
    assert circulant_rank(shifted, n) == r


# --- export ------------------------------------------------------------------


def test_export_layout_format():
    layout = build_layout(ProtocolSpec(kind="CHORD", n=2, k=2, m=1))
    buf = io.StringIO()
    export_layout(layout, buf)
    lines = buf.getvalue().splitlines()
    assert json.loads(lines[0]) == {"kind": "CHORD", "N": 2, "K": 2, "M": 1}
    assert lines[1:] == ["0,0,0,0", "0,0,1,1", "0,1,0,1", "0,1,1,0"]


def test_export_layout_bytes_stable(tmp_path):
    layout = build_layout(ProtocolSpec(kind="CDIL", n=8))
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    export_layout(layout, str(p1))
    export_layout(layout, str(p2))
    b1, b2 = p1.read_bytes(), p2.read_bytes()
    assert b1 == b2
    rows = b1.decode().splitlines()[1:]
    assert len(rows) == stored_entries(layout.spec)
    m, i, k, col = map(int, rows[-1].split(","))
    assert (m, i, k) == (layout.spec.m - 1, 7, layout.spec.k - 1)
    assert col == layout.columns[-1, 7, -1]
