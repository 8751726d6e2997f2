"""Columnar stripe files (``.stp``).

Layout::

    "STRP" | stripe 0 | ... | stripe n-1 | footer | footer_len u32le | "STRP"

Each stripe holds one chunk per schema column, in schema order::

    chunk := encoding u8 (0 = plain)
           | row_count u32le
           | null bitmap, ceil(rows/8) bytes, LSB-first, bit set = NULL
           | data

Data is little-endian and uncompressed: INT64 and DATE as 8-byte signed
integers (DATE = days since 1970-01-01), FLOAT64 as IEEE-754 doubles,
STRING as a u32le length array followed by the concatenated UTF-8 bytes.
NULL slots are zero-filled (length 0 for strings).

The footer is UTF-8 JSON describing the schema and, per stripe, the file
offset/length of every column chunk plus null counts and min/max values.
String bounds keep at most the first 32 UTF-8 bytes; a truncated upper
bound never prunes. NaN is excluded from float bounds and flagged so the
pruning rule leaves such columns alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import columns as C
from .errors import BadMagic, CorruptFooter, IoFailure, TypeMismatch
from .rowtext import ScanStats
from .schema import (
    Column as SchemaColumn,
    ColumnType,
    PartitionDescriptor,
    StorageFormat,
    TableSchema,
)
from .values import check_value

MAGIC = b"STRP"
EXTENSION = ".stp"
DEFAULT_STRIPE_SIZE = 10_000
STR_BOUND_BYTES = 32


@dataclass(frozen=True)
class ColumnStats:
    offset: int          # absolute file offset of the chunk
    length: int          # chunk byte length
    null_count: int
    min: object          # absent (None) when no usable values
    max: object
    min_truncated: bool = False
    max_truncated: bool = False
    has_nan: bool = False


@dataclass(frozen=True)
class StripeInfo:
    offset: int
    length: int
    row_count: int
    columns: tuple[ColumnStats, ...]


@dataclass(frozen=True)
class StripeFooter:
    schema: TableSchema
    row_count: int
    stripes: tuple[StripeInfo, ...]
    bytes_read: int  # bytes consumed to obtain this footer


def _truncate_bound(s: str) -> tuple[str, bool]:
    b = s.encode("utf-8")
    if len(b) <= STR_BOUND_BYTES:
        return s, False
    return b[:STR_BOUND_BYTES].decode("utf-8", "ignore"), True


def _column_stats(col: C.Column, ctype: ColumnType, n: int) -> dict:
    """Stats dict for one chunk (offsets filled in by the writer)."""
    valid = col.valid
    null_count = 0 if valid is None else int(n - valid.sum())
    out: dict = {"nulls": null_count}
    if null_count == n:
        return out
    if ctype is ColumnType.STRING:
        if isinstance(col, C.LazyStrColumn):
            col = col.decode()
        vals = col.data if valid is None else col.data[valid]
        mn, mx = min(vals), max(vals)
        mn, mn_t = _truncate_bound(mn)
        mx, mx_t = _truncate_bound(mx)
        out["min"], out["max"] = mn, mx
        if mn_t:
            out["min_truncated"] = True
        if mx_t:
            out["max_truncated"] = True
        return out
    vals = col.data if valid is None else col.data[valid]
    if ctype is ColumnType.FLOAT64:
        nan = np.isnan(vals)
        if nan.any():
            out["has_nan"] = True
            vals = vals[~nan]
        if len(vals) == 0:
            return out
        out["min"], out["max"] = float(vals.min()), float(vals.max())
    else:
        out["min"], out["max"] = int(vals.min()), int(vals.max())
    return out


def _pack_chunk(col: C.Column, ctype: ColumnType, n: int) -> bytes:
    parts = [b"\x00", struct.pack("<I", n)]
    if col.valid is None:
        parts.append(bytes((n + 7) // 8))
    else:
        parts.append(np.packbits(~col.valid, bitorder="little").tobytes())
    if ctype is ColumnType.STRING:
        if isinstance(col, C.LazyStrColumn):
            lengths = col.lengths.astype("<u4")
            parts.append(lengths.tobytes())
            parts.append(col.buf if isinstance(col.buf, bytes) else bytes(col.buf))
            return b"".join(parts)
        encoded = []
        lengths = np.zeros(n, dtype="<u4")
        data = col.data
        if col.valid is None:
            for i in range(n):
                b = data[i].encode("utf-8")
                lengths[i] = len(b)
                encoded.append(b)
        else:
            valid = col.valid
            for i in range(n):
                if valid[i]:
                    b = data[i].encode("utf-8")
                    lengths[i] = len(b)
                    encoded.append(b)
        parts.append(lengths.tobytes())
        parts.append(b"".join(encoded))
        return b"".join(parts)
    if ctype is ColumnType.FLOAT64:
        parts.append(col.data.astype("<f8", copy=False).tobytes())
    else:
        parts.append(col.data.astype("<i8", copy=False).tobytes())
    return b"".join(parts)


def _slice_column(col: C.Column, start: int, stop: int) -> C.Column:
    valid = None if col.valid is None else col.valid[start:stop]
    if isinstance(col, C.LazyStrColumn):
        b0, b1 = int(col.offsets[start]), int(col.offsets[stop])
        return C.LazyStrColumn(col.lengths[start:stop], col.buf[b0:b1], valid)
    if isinstance(col, C.StrColumn):
        return C.StrColumn(col.data[start:stop], valid)
    return C.NumColumn(col.data[start:stop], valid)


def _concat_columns(cols: list[C.Column], ctype: ColumnType) -> C.Column:
    if len(cols) == 1:
        return cols[0]
    n_total = sum(len(c) for c in cols)
    valids = [c.valid for c in cols]
    if any(v is not None for v in valids):
        valid = np.concatenate(
            [v if v is not None else np.ones(len(c), dtype=bool) for c, v in zip(cols, valids)]
        )
    else:
        valid = None
    if ctype is ColumnType.STRING:
        mats = [c.decode() if isinstance(c, C.LazyStrColumn) else c for c in cols]
        return C.StrColumn(np.concatenate([m.data for m in mats]), valid)
    return C.NumColumn(np.concatenate([c.data for c in cols]), valid)


class StripeWriter:
    """Streaming writer: buffers columns, emits full stripes as they fill."""

    def __init__(self, schema: TableSchema, path, stripe_size: int = DEFAULT_STRIPE_SIZE):
        if stripe_size <= 0:
            raise ValueError("stripe_size must be positive")
        self.schema = schema
        self.path = Path(path)
        self.stripe_size = stripe_size
        self._segments: list[list[C.Column]] = [[] for _ in schema.columns]
        self._buffered = 0
        self._rows = 0
        self._stripe_dirs: list[dict] = []
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._f = open(self.path, "wb")
            self._f.write(MAGIC)
        except OSError as e:
            raise IoFailure(f"cannot write {self.path}: {e}") from e
        self._pos = len(MAGIC)

    def append_columns(self, cols: list[C.Column]) -> None:
        n = len(cols[0]) if cols else 0
        if n == 0:
            return
        for i, col in enumerate(cols):
            self._segments[i].append(col)
        self._buffered += n
        while self._buffered >= self.stripe_size:
            self._emit(self.stripe_size)

    def append_rows(self, rows) -> None:
        """Type-checked row-tuple path."""
        batch = []
        for row in rows:
            if len(row) != self.schema.arity:
                raise TypeMismatch(
                    f"row arity {len(row)} != schema arity {self.schema.arity}"
                )
            for col, value in zip(self.schema.columns, row):
                check_value(value, col.ctype, col.nullable, col.name)
            batch.append(row)
            if len(batch) >= self.stripe_size:
                self._append_row_batch(batch)
                batch = []
        if batch:
            self._append_row_batch(batch)

    def _append_row_batch(self, batch: list) -> None:
        cols = [
            C.column_from_values([r[i] for r in batch], c.ctype)
            for i, c in enumerate(self.schema.columns)
        ]
        self.append_columns(cols)

    def _gather(self, count: int) -> list[C.Column]:
        out = []
        for i, col_schema in enumerate(self.schema.columns):
            merged = _concat_columns(self._segments[i], col_schema.ctype)
            if len(merged) > count:
                out.append(_slice_column(merged, 0, count))
                self._segments[i] = [_slice_column(merged, count, len(merged))]
            else:
                out.append(merged)
                self._segments[i] = []
        return out

    def _emit(self, count: int) -> None:
        cols = self._gather(count)
        stripe_off = self._pos
        col_dirs = []
        try:
            for col, col_schema in zip(cols, self.schema.columns):
                chunk = _pack_chunk(col, col_schema.ctype, count)
                stats = _column_stats(col, col_schema.ctype, count)
                stats["offset"] = self._pos
                stats["length"] = len(chunk)
                col_dirs.append(stats)
                self._f.write(chunk)
                self._pos += len(chunk)
        except OSError as e:
            raise IoFailure(f"cannot write {self.path}: {e}") from e
        self._stripe_dirs.append(
            {
                "offset": stripe_off,
                "length": self._pos - stripe_off,
                "rows": count,
                "columns": col_dirs,
            }
        )
        self._rows += count
        self._buffered -= count

    def close(self, *, partition_id: int = 0, worker_id: int = 0) -> PartitionDescriptor:
        if self._buffered:
            self._emit(self._buffered)
        footer = {
            "schema": {
                "table_name": self.schema.table_name,
                "columns": [[c.name, c.ctype.value, c.nullable] for c in self.schema.columns],
            },
            "rows": self._rows,
            "stripes": self._stripe_dirs,
        }
        blob = json.dumps(footer, sort_keys=True, separators=(",", ":")).encode("utf-8")
        try:
            self._f.write(blob)
            self._f.write(struct.pack("<I", len(blob)))
            self._f.write(MAGIC)
            self._f.close()
        except OSError as e:
            raise IoFailure(f"cannot write {self.path}: {e}") from e
        return PartitionDescriptor(
            partition_id=partition_id,
            worker_id=worker_id,
            path=str(self.path),
            format=StorageFormat.STRIPE,
            row_count=self._rows,
        )


def write_stripes(rows, schema: TableSchema, path,
                  stripe_size: int = DEFAULT_STRIPE_SIZE, *,
                  partition_id: int = 0, worker_id: int = 0) -> PartitionDescriptor:
    w = StripeWriter(schema, path, stripe_size)
    w.append_rows(rows)
    return w.close(partition_id=partition_id, worker_id=worker_id)


def read_footer(path) -> StripeFooter:
    """Parse the footer directory; reads only header magic + trailer + footer."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(4)
            f.seek(0, 2)
            size = f.tell()
            if size < 12 or head != MAGIC:
                raise BadMagic(f"{path} is not a stripe file")
            f.seek(size - 8)
            tail = f.read(8)
            if tail[4:] != MAGIC:
                raise BadMagic(f"{path}: trailing magic missing (truncated?)")
            flen = struct.unpack("<I", tail[:4])[0]
            if flen > size - 12:
                raise BadMagic(f"{path}: footer length {flen} exceeds file size")
            f.seek(size - 8 - flen)
            blob = f.read(flen)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    try:
        doc = json.loads(blob.decode("utf-8"))
        schema = TableSchema(
            doc["schema"]["table_name"],
            tuple(
                SchemaColumn(n, ColumnType(t), bool(nl))
                for n, t, nl in doc["schema"]["columns"]
            ),
        )
        stripes = []
        for s in doc["stripes"]:
            cols = tuple(
                ColumnStats(
                    offset=c["offset"],
                    length=c["length"],
                    null_count=c["nulls"],
                    min=c.get("min"),
                    max=c.get("max"),
                    min_truncated=c.get("min_truncated", False),
                    max_truncated=c.get("max_truncated", False),
                    has_nan=c.get("has_nan", False),
                )
                for c in s["columns"]
            )
            stripes.append(StripeInfo(s["offset"], s["length"], s["rows"], cols))
        total = doc["rows"]
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptFooter(f"{path}: unparsable footer: {e}") from e

    footer_start = size - 8 - flen
    prev_end = 4
    for s in stripes:
        if s.offset != prev_end:
            raise CorruptFooter(f"{path}: stripe offsets not contiguous/increasing")
        if s.length <= 0 or s.offset + s.length > footer_start:
            raise CorruptFooter(f"{path}: stripe extends past footer")
        for c in s.columns:
            if not (s.offset <= c.offset and c.offset + c.length <= s.offset + s.length):
                raise CorruptFooter(f"{path}: column chunk outside its stripe")
        prev_end = s.offset + s.length
    if sum(s.row_count for s in stripes) != total:
        raise CorruptFooter(f"{path}: stripe row counts do not sum to total")
    return StripeFooter(
        schema=schema,
        row_count=total,
        stripes=tuple(stripes),
        bytes_read=4 + 8 + flen,
    )


def read_stripe_columns(path, footer: StripeFooter, stripe_idx: int,
                        needed: list[int]) -> tuple[dict[int, C.Column], int]:
    """Read the requested column chunks of one stripe.

    Returns ``({col_index: Column}, bytes_read)``. String columns come back
    lazy (undecoded).
    """
    stripe = footer.stripes[stripe_idx]
    out: dict[int, C.Column] = {}
    bytes_read = 0
    try:
        with open(path, "rb") as f:
            for i in needed:
                st = stripe.columns[i]
                f.seek(st.offset)
                raw = f.read(st.length)
                bytes_read += len(raw)
                out[i] = _parse_chunk(raw, footer.schema.columns[i].ctype,
                                      stripe.row_count, path)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return out, bytes_read


def _parse_chunk(raw: bytes, ctype: ColumnType, rows: int, path) -> C.Column:
    if len(raw) < 5 or raw[0] != 0:
        raise CorruptFooter(f"{path}: bad chunk header")
    rc = struct.unpack("<I", raw[1:5])[0]
    if rc != rows:
        raise CorruptFooter(f"{path}: chunk row count {rc} != stripe rows {rows}")
    bm_len = (rc + 7) // 8
    body = raw[5 + bm_len:]
    bitmap = np.frombuffer(raw, dtype=np.uint8, count=bm_len, offset=5)
    nulls = np.unpackbits(bitmap, count=rc, bitorder="little").astype(bool)
    valid = None if not nulls.any() else ~nulls
    if ctype is ColumnType.STRING:
        if len(body) < 4 * rc:
            raise CorruptFooter(f"{path}: string chunk too short")
        lengths = np.frombuffer(body, dtype="<u4", count=rc)
        buf = body[4 * rc:]
        if int(lengths.sum()) != len(buf):
            raise CorruptFooter(f"{path}: string chunk byte count mismatch")
        return C.LazyStrColumn(lengths, buf, valid)
    if len(body) != 8 * rc:
        raise CorruptFooter(f"{path}: numeric chunk byte count mismatch")
    if ctype is ColumnType.FLOAT64:
        return C.NumColumn(np.frombuffer(body, dtype="<f8", count=rc), valid)
    return C.NumColumn(np.frombuffer(body, dtype="<i8", count=rc), valid)


# --- pruning rule (the single authority; the planner calls this too) ---

_NEG_INF = object()
_POS_INF = object()


def _lt(a, b) -> bool:
    if a is _NEG_INF or b is _POS_INF:
        return True
    if a is _POS_INF or b is _NEG_INF:
        return False
    return a < b


class _Interval:
    """Closed/open interval over one column's comparable domain."""

    __slots__ = ("lo", "lo_open", "hi", "hi_open")

    def __init__(self):
        self.lo, self.lo_open = _NEG_INF, False
        self.hi, self.hi_open = _POS_INF, False

    def narrow(self, op: str, v) -> None:
        if op == "=":
            self._raise_lo(v, False)
            self._lower_hi(v, False)
        elif op == ">":
            self._raise_lo(v, True)
        elif op == ">=":
            self._raise_lo(v, False)
        elif op == "<":
            self._lower_hi(v, True)
        elif op == "<=":
            self._lower_hi(v, False)

    def _raise_lo(self, v, is_open: bool) -> None:
        if self.lo is _NEG_INF or _lt(self.lo, v):
            self.lo, self.lo_open = v, is_open
        elif not _lt(v, self.lo) and is_open:
            self.lo_open = True

    def _lower_hi(self, v, is_open: bool) -> None:
        if self.hi is _POS_INF or _lt(v, self.hi):
            self.hi, self.hi_open = v, is_open
        elif not _lt(self.hi, v) and is_open:
            self.hi_open = True

    def empty(self) -> bool:
        if self.lo is _NEG_INF or self.hi is _POS_INF:
            return False
        if _lt(self.hi, self.lo):
            return True
        if not _lt(self.lo, self.hi):  # lo == hi
            return self.lo_open or self.hi_open
        return False

    def disjoint_from(self, smin, smax) -> bool:
        """True when [smin, smax] cannot intersect this interval.

        smax may be _POS_INF (truncated upper bound / unbounded).
        """
        if self.lo is not _NEG_INF:
            if smax is not _POS_INF and (_lt(smax, self.lo) or (self.lo_open and not _lt(self.lo, smax))):
                return True
        if self.hi is not _POS_INF:
            if _lt(self.hi, smin) or (self.hi_open and not _lt(smin, self.hi)):
                return True
        return False


def analyze_predicate(conjuncts):
    """Per-column satisfying intervals plus != points; detects contradiction."""
    intervals: dict[int, _Interval] = {}
    neq: dict[int, list] = {}
    for c in conjuncts:
        if c.op == "!=":
            neq.setdefault(c.col, []).append(c.value)
            continue
        iv = intervals.setdefault(c.col, _Interval())
        iv.narrow(c.op, c.value)
    contradiction = any(iv.empty() for iv in intervals.values())
    return intervals, neq, contradiction


def stripe_may_match(stripe: StripeInfo, conjuncts, intervals=None, neq=None,
                     contradiction=None) -> bool:
    """Conservative test: can any row of this stripe satisfy the predicate?"""
    if intervals is None:
        intervals, neq, contradiction = analyze_predicate(conjuncts)
    if contradiction and conjuncts:
        return False
    touched = set(intervals) | set(neq)
    for col in touched:
        st = stripe.columns[col]
        if st.null_count == stripe.row_count:
            return False  # only NULLs: no comparison can be satisfied
        if st.has_nan:
            continue  # NaN rows defeat interval reasoning on this column
        if st.min is None:
            continue
        smin = st.min
        smax = _POS_INF if st.max_truncated else st.max
        iv = intervals.get(col)
        if iv is not None and iv.disjoint_from(smin, smax):
            return False
        for v in neq.get(col, ()):
            if (
                not st.min_truncated
                and not st.max_truncated
                and st.min == st.max == v
            ):
                return False
    return True


def prune_stripes(footer: StripeFooter, conjuncts) -> list[bool]:
    """Retained-mask over stripes for a conjunctive predicate."""
    if not conjuncts:
        return [True] * len(footer.stripes)
    intervals, neq, contradiction = analyze_predicate(conjuncts)
    return [
        stripe_may_match(s, conjuncts, intervals, neq, contradiction)
        for s in footer.stripes
    ]


def scan_stripes(path, schema: TableSchema, projection=None, predicate=(),
                 prune: bool = True):
    """Row-tuple scan over a stripe file with optional stripe pruning.

    Yields one batch (list of tuples) per retained stripe; ``.stats`` is
    complete after iteration. Result sets are identical with prune on/off.
    """
    return _StripeScan(path, schema, projection, predicate, prune)


class _StripeScan:
    def __init__(self, path, schema, projection, predicate, prune):
        self._path = Path(path)
        self._schema = schema
        self._projection = list(range(schema.arity)) if projection is None else list(projection)
        self._predicate = tuple(predicate)
        self._prune = prune
        self.stats = ScanStats()

    def __iter__(self):
        footer = read_footer(self._path)
        if len(footer.schema.columns) != len(self._schema.columns) or any(
            a.ctype != b.ctype for a, b in zip(footer.schema.columns, self._schema.columns)
        ):
            raise TypeMismatch(
                f"{self._path}: file schema does not match expected schema"
            )
        stats = self.stats
        stats.bytes_read += footer.bytes_read
        stats.stripes_total += len(footer.stripes)
        retained = (
            prune_stripes(footer, self._predicate)
            if self._prune
            else [True] * len(footer.stripes)
        )
        stats.stripes_pruned += retained.count(False)
        needed = sorted(set(self._projection) | {c.col for c in self._predicate})
        types = [c.ctype for c in self._schema.columns]
        for si, keep in enumerate(retained):
            if not keep:
                continue
            cols, nbytes = read_stripe_columns(self._path, footer, si, needed)
            stats.bytes_read += nbytes
            stats.rows_read += footer.stripes[si].row_count
            n_rows = footer.stripes[si].row_count
            mask = C.predicate_mask(cols, self._predicate)
            if mask is not None:
                idx = np.flatnonzero(mask)
                if len(idx) == 0:
                    continue
                cols = {i: C.take(col, idx) for i, col in cols.items()}
                n_rows = len(idx)
            out_cols = [C.column_to_values(cols[i], types[i]) for i in self._projection]
            if out_cols:
                yield list(zip(*out_cols))
            else:
                yield [()] * n_rows


def dump_footer(path) -> str:
    """Human-readable footer dump for the ``inspect`` CLI subcommand."""
    footer = read_footer(path)
    lines = [
        f"file: {path}",
        f"table: {footer.schema.table_name}",
        "columns: " + ", ".join(
            f"{c.name}:{c.ctype.value}" for c in footer.schema.columns
        ),
        f"rows: {footer.row_count}",
        f"stripes: {len(footer.stripes)}",
    ]
    for i, s in enumerate(footer.stripes):
        lines.append(
            f"  stripe {i}: offset={s.offset} length={s.length} rows={s.row_count}"
        )
        for c_schema, st in zip(footer.schema.columns, s.columns):
            extra = ""
            if st.min is not None:
                mn = st.min if not st.min_truncated else f"{st.min}…"
                mx = st.max if not st.max_truncated else f"{st.max}…"
                extra = f" min={mn!r} max={mx!r}"
            if st.has_nan:
                extra += " has_nan"
            lines.append(
                f"    {c_schema.name}: nulls={st.null_count}{extra}"
            )
    return "\n".join(lines)
