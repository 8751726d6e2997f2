"""CSV ingestion into partitioned tables.

Accepts RFC-4180-style CSV (quoted fields, ``""`` escape) with a mandatory
header whose names must match the target schema case-insensitively, in any
order. Rows are distributed round-robin in batches of ``stripe_size``
across ``partitions`` writers, so partition 0 gets batches 0, P, 2P, ...

An optional stable pre-sort on one column clusters values so stripe
statistics become selective; without it uniformly distributed columns
never prune.
"""

from __future__ import annotations

import csv
from itertools import islice
from pathlib import Path

import numpy as np

from . import columns as C
from .errors import ArityError, HeaderMismatch, IoFailure, ParseError
from .rowtext import EXTENSION as RTX_EXT
from .schema import (
    DEFAULT_PARTITIONS,
    DEFAULT_WORKERS,
    Catalog,
    ColumnType,
    StorageFormat,
    TableEntry,
    TableSchema,
)
from .stripefile import DEFAULT_STRIPE_SIZE, EXTENSION as STP_EXT, StripeWriter


def _open_reader(path):
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return f, csv.reader(f)


def _header_map(header: list[str], schema: TableSchema, path) -> list[int]:
    """For each schema column, the CSV field position holding it."""
    names = [h.lower() for h in header]
    want = [c.name for c in schema.columns]
    if sorted(names) != sorted(want):
        raise HeaderMismatch(
            f"{path}: header {names} does not match schema columns {want}"
        )
    return [names.index(w) for w in want]


def _parse_column(fields: list[str], ctype: ColumnType, *, csv_rows: list[int],
                  csv_col: int) -> C.Column:
    """Vectorized text-to-value conversion; empty field -> NULL."""
    if ctype is ColumnType.STRING:
        # dedupe within the batch: low-cardinality columns share objects
        memo: dict[str, str] = {}
        data = np.array([memo.setdefault(f, f) for f in fields], dtype=object)
        valid = data != ""
        if valid.all():
            return C.StrColumn(data, None)
        data[~valid] = None
        return C.StrColumn(data, valid)
    u = np.asarray(fields)
    valid = u != ""
    all_valid = bool(valid.all())
    try:
        if ctype is ColumnType.INT64:
            data = (u if all_valid else np.where(valid, u, "0")).astype(np.int64)
        elif ctype is ColumnType.FLOAT64:
            data = (u if all_valid else np.where(valid, u, "0")).astype(np.float64)
        else:
            src = u if all_valid else np.where(valid, u, "1970-01-01")
            data = src.astype("datetime64[D]").astype(np.int64)
    except ValueError:
        for j, text in enumerate(fields):
            if text == "":
                continue
            try:
                if ctype is ColumnType.INT64:
                    int(text)
                elif ctype is ColumnType.FLOAT64:
                    float(text)
                else:
                    np.datetime64(text, "D")
            except ValueError:
                raise ParseError(
                    f"cannot parse {ctype.value} value {text!r}",
                    row=csv_rows[j],
                    column=csv_col + 1,
                ) from None
        raise
    return C.NumColumn(data, None if all_valid else valid)


def _format_column(col: C.Column, ctype: ColumnType) -> list[str]:
    """Canonical field text per value for row-text output."""
    if isinstance(col, C.StrColumn):
        if col.valid is None:
            return list(col.data)
        return [v if v is not None else "" for v in col.data]
    data = col.data
    if ctype is ColumnType.FLOAT64:
        out = [repr(v) for v in data.tolist()]
    elif ctype is ColumnType.DATE:
        out = [str(d) for d in data.astype("datetime64[D]")]
    else:
        out = [str(v) for v in data.tolist()]
    if col.valid is not None:
        for i in np.flatnonzero(~col.valid):
            out[i] = ""
    return out


class _RowtextPartWriter:
    def __init__(self, path: Path, schema: TableSchema):
        self.path = path
        self.schema = schema
        self.rows = 0
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._f = open(path, "w", encoding="utf-8", newline="")
        except OSError as e:
            raise IoFailure(f"cannot write {path}: {e}") from e

    def append_columns(self, cols: list[C.Column]) -> None:
        texts = [
            _format_column(col, c.ctype)
            for col, c in zip(cols, self.schema.columns)
        ]
        n = len(texts[0])
        lines = ["|".join(row) + "\n" for row in zip(*texts)]
        try:
            self._f.write("".join(lines))
        except OSError as e:
            raise IoFailure(f"cannot write {self.path}: {e}") from e
        self.rows += n

    def close(self, *, partition_id: int, worker_id: int):
        from .schema import PartitionDescriptor

        self._f.close()
        return PartitionDescriptor(
            partition_id=partition_id,
            worker_id=worker_id,
            path=str(self.path),
            format=StorageFormat.ROWTEXT,
            row_count=self.rows,
        )


def ingest_csv(catalog: Catalog, table: str, csv_path, *,
               partitions: int = DEFAULT_PARTITIONS,
               stripe_size: int = DEFAULT_STRIPE_SIZE,
               sort_by: str | None = None) -> TableEntry:
    """Load a CSV file into an existing (created) table.

    Returns the updated TableEntry. With ``sort_by`` the whole file is read,
    stably sorted on that column, then distributed; NULLs sort first.
    """
    entry = catalog.get_table(table)
    schema = entry.schema
    fmt = entry.format
    base = catalog.data_root / "tables" / schema.table_name
    ext = STP_EXT if fmt is StorageFormat.STRIPE else RTX_EXT

    f, reader = _open_reader(csv_path)
    with f:
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{csv_path}: empty file, header required") from None
        field_pos = _header_map(header, schema, csv_path)

        batches = _read_batches(reader, schema, field_pos, stripe_size, csv_path)
        if sort_by is not None:
            batches = _sorted_batches(batches, schema, sort_by, stripe_size)

        writers: list = []
        next_part = len(entry.partitions)
        for b, cols in enumerate(batches):
            slot = b % partitions
            if slot >= len(writers):
                pid = next_part + slot
                path = base / f"part-{pid:05d}{ext}"
                if fmt is StorageFormat.STRIPE:
                    writers.append(StripeWriter(schema, path, stripe_size))
                else:
                    writers.append(_RowtextPartWriter(path, schema))
            writers[slot].append_columns(cols)

    for slot, w in enumerate(writers):
        pid = next_part + slot
        desc = w.close(partition_id=pid, worker_id=pid % DEFAULT_WORKERS)
        entry = catalog.register_partition(schema.table_name, desc)
    return entry


def _read_batches(reader, schema: TableSchema, field_pos: list[int],
                  batch_rows: int, csv_path):
    """Yield per-batch column lists in schema order."""
    arity = len(field_pos)
    line_no = 1  # header consumed
    while True:
        rows = list(islice(reader, batch_rows))
        if not rows:
            return
        first_line = line_no + 1
        for r in rows:
            line_no += 1
            if len(r) != arity:
                raise ArityError(
                    f"{csv_path}: row {line_no} has {len(r)} fields, expected {arity}"
                )
        csv_rows = list(range(first_line, line_no + 1))
        cols = []
        for i, col_schema in enumerate(schema.columns):
            pos = field_pos[i]
            fields = [r[pos] for r in rows]
            cols.append(
                _parse_column(fields, col_schema.ctype,
                              csv_rows=csv_rows, csv_col=pos)
            )
        yield cols


def _sorted_batches(batches, schema: TableSchema, sort_by: str, batch_rows: int):
    """Materialize, stable-sort on one column, re-batch."""
    key_idx = schema.column_index(sort_by)
    collected = [[] for _ in schema.columns]
    for cols in batches:
        for i, col in enumerate(cols):
            collected[i].append(col)
    if not collected[0]:
        return
    from .stripefile import _concat_columns

    merged = [
        _concat_columns(parts, c.ctype)
        for parts, c in zip(collected, schema.columns)
    ]
    collected.clear()
    key = merged[key_idx]
    if isinstance(key, (C.StrColumn, C.LazyStrColumn)):
        key = C._materialize_str(key)
        if key.valid is not None:
            u = key.data.copy()
            u[~key.valid] = ""
            # lexsort is stable; primary key last: NULLs first, then value
            order = np.lexsort((u.astype("U"), key.valid.astype(np.int8)))
        else:
            order = np.argsort(key.data.astype("U"), kind="stable")
    elif key.valid is not None:
        order = np.lexsort((key.data, key.valid.astype(np.int8)))
    else:
        order = np.argsort(key.data, kind="stable")
    n = len(key)
    for start in range(0, n, batch_rows):
        idx = order[start:start + batch_rows]
        yield [C.take(col, idx) for col in merged]
