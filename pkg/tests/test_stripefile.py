import math
import os
import random

import pytest
from hypothesis import given, settings, strategies as st

from stripehouse.errors import BadMagic, CorruptFooter
from stripehouse.predicate import Conjunct, row_passes
from stripehouse.schema import ColumnType, TableSchema
from stripehouse.stripefile import (
    dump_footer,
    prune_stripes,
    read_footer,
    scan_stripes,
    write_stripes,
)

SCHEMA = TableSchema.create("t", [
    ("a", ColumnType.INT64, True),
    ("b", ColumnType.STRING, True),
    ("c", ColumnType.FLOAT64, True),
    ("d", ColumnType.DATE, True),
])


def collect(scan):
    return [row for batch in scan for row in batch]


def rows_equal(got, expected):
    if len(got) != len(expected):
        return False
    for g, e in zip(got, expected):
        for gv, ev in zip(g, e):
            if isinstance(ev, float) and math.isnan(ev):
                if not (isinstance(gv, float) and math.isnan(gv)):
                    return False
            elif gv != ev:
                return False
    return True


def make_rows(n, seed=0, with_nan=False):
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        rows.append((
            rng.randrange(-500, 500) if rng.random() > 0.1 else None,
            rng.choice(["alpha", "beta", "gamma", "delta"]) if rng.random() > 0.1 else None,
            (float("nan") if with_nan and rng.random() < 0.02
             else rng.uniform(0, 200)) if rng.random() > 0.1 else None,
            rng.randrange(10_000, 18_000) if rng.random() > 0.1 else None,
        ))
    return rows


def test_stripe_ceiling_arithmetic(tmp_path):
    rows = [(i, "x", 1.0, 0) for i in range(25_000)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=10_000)
    footer = read_footer(tmp_path / "p.stp")
    assert [s.row_count for s in footer.stripes] == [10_000, 10_000, 5_000]
    assert footer.row_count == 25_000


def test_all_null_column_stats(tmp_path):
    rows = [(None, "x", 1.0, 0) for _ in range(100)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=50)
    footer = read_footer(tmp_path / "p.stp")
    for s in footer.stripes:
        st0 = s.columns[0]
        assert st0.null_count == s.row_count
        assert st0.min is None and st0.max is None


def test_stats_match_brute_force(tmp_path):
    rows = make_rows(5_000, seed=3, with_nan=True)
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=1_000)
    footer = read_footer(tmp_path / "p.stp")
    start = 0
    for s in footer.stripes:
        chunk = rows[start:start + s.row_count]
        start += s.row_count
        for ci in range(4):
            vals = [r[ci] for r in chunk]
            non_null = [v for v in vals if v is not None]
            st_col = s.columns[ci]
            assert st_col.null_count == len(vals) - len(non_null)
            if ci == 2:
                finite = [v for v in non_null if not math.isnan(v)]
                assert st_col.has_nan == any(math.isnan(v) for v in non_null)
            else:
                finite = non_null
            if finite:
                assert st_col.min == min(finite)
                assert st_col.max == max(finite)
            else:
                assert st_col.min is None


def test_footer_read_is_small(tmp_path):
    rows = [(i, "value", float(i), 10) for i in range(25_000)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=10_000)
    footer = read_footer(tmp_path / "p.stp")
    file_size = os.path.getsize(tmp_path / "p.stp")
    assert footer.bytes_read < 0.01 * file_size
    assert footer.row_count == 25_000


def test_truncated_file_bad_magic(tmp_path):
    rows = [(i, "x", 1.0, 0) for i in range(1000)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=100)
    data = (tmp_path / "p.stp").read_bytes()
    (tmp_path / "cut.stp").write_bytes(data[:-7])
    with pytest.raises(BadMagic):
        read_footer(tmp_path / "cut.stp")
    (tmp_path / "junk.stp").write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(BadMagic):
        read_footer(tmp_path / "junk.stp")


def test_corrupt_footer_detected(tmp_path):
    rows = [(i, "x", 1.0, 0) for i in range(100)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=50)
    data = bytearray((tmp_path / "p.stp").read_bytes())
    # corrupt the first stripe's declared offset inside the footer JSON
    footer_len = int.from_bytes(data[-8:-4], "little")
    footer = bytes(data[-8 - footer_len:-8]).decode()
    bad = footer.replace('"offset":4,"rows"', '"offset":400,"rows"', 1)
    assert bad != footer
    blob = bad.encode()
    new = data[: -8 - footer_len] + blob + len(blob).to_bytes(4, "little") + b"STRP"
    (tmp_path / "bad.stp").write_bytes(bytes(new))
    with pytest.raises(CorruptFooter):
        read_footer(tmp_path / "bad.stp")


def test_empty_table_footer(tmp_path):
    write_stripes([], SCHEMA, tmp_path / "p.stp")
    footer = read_footer(tmp_path / "p.stp")
    assert footer.stripes == ()
    assert footer.row_count == 0
    assert collect(scan_stripes(tmp_path / "p.stp", SCHEMA)) == []


def test_round_trip_preserves_rows(tmp_path):
    rows = make_rows(3_333, seed=11, with_nan=True)
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=500)
    got = collect(scan_stripes(tmp_path / "p.stp", SCHEMA))
    assert rows_equal(got, rows)


def test_byte_deterministic(tmp_path):
    rows = make_rows(2_000, seed=5)
    write_stripes(rows, SCHEMA, tmp_path / "a.stp", stripe_size=300)
    write_stripes(rows, SCHEMA, tmp_path / "b.stp", stripe_size=300)
    assert (tmp_path / "a.stp").read_bytes() == (tmp_path / "b.stp").read_bytes()


def test_prune_interval_logic(tmp_path):
    # every stripe max(v) <= 200 -> v > 300 prunes everything
    rows = [(i, "x", float(i % 200), 0) for i in range(5_000)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=1_000)
    scan = scan_stripes(tmp_path / "p.stp", SCHEMA, predicate=[Conjunct(2, ">", 300.0)])
    assert collect(scan) == []
    assert scan.stats.stripes_pruned == scan.stats.stripes_total == 5
    assert scan.stats.rows_read == 0


def test_contradictory_conjuncts_prune_all(tmp_path):
    rows = [(i, "x", float(i), 0) for i in range(3_000)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=1_000)
    footer = read_footer(tmp_path / "p.stp")
    mask = prune_stripes(footer, [Conjunct(0, ">", 10), Conjunct(0, "<", 5)])
    assert mask == [False, False, False]


def test_prune_on_off_equivalence_randomized(tmp_path):
    rng = random.Random(99)
    rows = sorted(make_rows(8_000, seed=21, with_nan=True),
                  key=lambda r: (r[0] is not None, r[0] or 0))
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=500)
    ops = ["=", "!=", "<", "<=", ">", ">="]
    for trial in range(40):
        col = rng.randrange(4)
        if col == 1:
            pred = [Conjunct(1, rng.choice(["=", "!="]),
                             rng.choice(["alpha", "beta", "zeta"]))]
        elif col == 2:
            pred = [Conjunct(2, rng.choice(ops), rng.uniform(-10, 210))]
        else:
            pred = [Conjunct(col, rng.choice(ops), rng.randrange(-600, 600))]
        if rng.random() < 0.4:
            pred.append(Conjunct(0, rng.choice(ops), rng.randrange(-600, 600)))
        on = collect(scan_stripes(tmp_path / "p.stp", SCHEMA, predicate=pred, prune=True))
        off = collect(scan_stripes(tmp_path / "p.stp", SCHEMA, predicate=pred, prune=False))
        assert rows_equal(on, off), pred
        expected = [r for r in rows if row_passes(pred, r)]
        assert rows_equal(on, expected), pred


def test_pruning_soundness_every_matching_row_retained(tmp_path):
    rows = sorted(make_rows(4_000, seed=8), key=lambda r: (r[3] is not None, r[3] or 0))
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=250)
    pred = [Conjunct(3, ">=", 14_000), Conjunct(3, "<", 15_000)]
    scan = scan_stripes(tmp_path / "p.stp", SCHEMA, predicate=pred)
    got = collect(scan)
    expected = [r for r in rows if row_passes(pred, r)]
    assert rows_equal(got, expected)
    assert scan.stats.stripes_pruned > 0  # clustered data actually prunes


def test_projection_reads_fraction_of_bytes(tmp_path):
    schema6 = TableSchema.create("w", [(f"c{i}", ColumnType.INT64, False) for i in range(6)])
    rows = [tuple(i * 6 + j for j in range(6)) for i in range(20_000)]
    write_stripes(rows, schema6, tmp_path / "w.stp", stripe_size=5_000)
    full = scan_stripes(tmp_path / "w.stp", schema6)
    collect(full)
    one = scan_stripes(tmp_path / "w.stp", schema6, projection=[2])
    got = collect(one)
    assert got == [(r[2],) for r in rows]
    assert one.stats.bytes_read < full.stats.bytes_read / 3


def test_metadata_count_equals_brute_force(tmp_path):
    rows = make_rows(7_777, seed=2)
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=900)
    footer = read_footer(tmp_path / "p.stp")
    assert sum(s.row_count for s in footer.stripes) == len(rows)


def test_string_bound_truncation_sound(tmp_path):
    long_lo = "a" * 100
    long_hi = "z" * 100
    rows = [(1, long_lo, 1.0, 0), (2, long_hi, 1.0, 0)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=10)
    footer = read_footer(tmp_path / "p.stp")
    st_col = footer.stripes[0].columns[1]
    assert st_col.min == "a" * 32 and st_col.min_truncated
    assert st_col.max == "z" * 32 and st_col.max_truncated
    # a literal above the truncated max must NOT prune (max acts as +inf)
    mask = prune_stripes(footer, [Conjunct(1, "=", "z" * 100)])
    assert mask == [True]
    got = collect(scan_stripes(tmp_path / "p.stp", SCHEMA,
                               predicate=[Conjunct(1, "=", long_hi)]))
    assert got == [(2, long_hi, 1.0, 0)]
    # below the (exact-prefix) min still prunes
    mask = prune_stripes(footer, [Conjunct(1, "=", "a" * 10)])
    assert mask == [False]


def test_nan_never_pruned(tmp_path):
    rows = [(1, "x", float("nan"), 0), (2, "x", 5.0, 0)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=10)
    # NaN satisfies != ; pruning must keep the stripe even though min==max==5
    got = collect(scan_stripes(tmp_path / "p.stp", SCHEMA,
                               predicate=[Conjunct(2, "!=", 5.0)]))
    assert len(got) == 1 and math.isnan(got[0][2])


def test_inspect_dump_contains_stats(tmp_path):
    rows = [(i, "x", float(i), 0) for i in range(100)]
    write_stripes(rows, SCHEMA, tmp_path / "p.stp", stripe_size=50)
    text = dump_footer(tmp_path / "p.stp")
    assert "stripes: 2" in text
    assert "min=0" in text and "max=49" in text


# --- property tests ---

_val = st.one_of(
    st.none(),
    st.integers(min_value=-(2**62), max_value=2**62),
)
_str_val = st.one_of(st.none(), st.text(min_size=0, max_size=40))
_float_val = st.one_of(
    st.none(),
    st.floats(allow_nan=True, allow_infinity=True, width=64),
)
_date_val = st.one_of(st.none(), st.integers(min_value=-100_000, max_value=100_000))

_row = st.tuples(_val, _str_val, _float_val, _date_val)


@settings(max_examples=60, deadline=None)
@given(rows=st.lists(_row, min_size=0, max_size=300),
       stripe_size=st.integers(min_value=1, max_value=97))
def test_property_round_trip(tmp_path_factory, rows, stripe_size):
    path = tmp_path_factory.mktemp("prop") / "p.stp"
    write_stripes(rows, SCHEMA, path, stripe_size=stripe_size)
    footer = read_footer(path)
    expected_stripes = -(-len(rows) // stripe_size) if rows else 0
    assert len(footer.stripes) == expected_stripes
    got = collect(scan_stripes(path, SCHEMA))
    assert rows_equal(got, rows)


@settings(max_examples=40, deadline=None)
@given(
    keys=st.lists(st.integers(min_value=-50, max_value=50), min_size=1, max_size=200),
    op=st.sampled_from(["=", "!=", "<", "<=", ">", ">="]),
    lit=st.integers(min_value=-60, max_value=60),
    stripe_size=st.integers(min_value=1, max_value=50),
)
def test_property_prune_soundness(tmp_path_factory, keys, op, lit, stripe_size):
    rows = [(k, "s", float(k), k) for k in sorted(keys)]
    path = tmp_path_factory.mktemp("prop2") / "p.stp"
    write_stripes(rows, SCHEMA, path, stripe_size=stripe_size)
    pred = [Conjunct(0, op, lit)]
    got = collect(scan_stripes(path, SCHEMA, predicate=pred, prune=True))
    expected = [r for r in rows if row_passes(pred, r)]
    assert rows_equal(got, expected)
