"""Row-oriented delimited block files (``.rtx``): the no-index baseline.

Layout: UTF-8, ``|`` between fields, ``\\n`` between records, NULL as the
empty field, no header. Counting or filtering always scans the whole file,
so ``rows_read`` equals the file's row count no matter the predicate.

Note the format cannot distinguish an empty string from NULL; both encode
as an empty field and read back as NULL.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from itertools import islice
from pathlib import Path

import numpy as np

from . import columns as C
from .errors import IllegalCharacter, IoFailure, MalformedRecord
from .schema import ColumnType, PartitionDescriptor, StorageFormat, TableSchema
from .values import check_value, format_value

DEFAULT_BATCH_ROWS = 4096
EXTENSION = ".rtx"


@dataclass
class ScanStats:
    rows_read: int = 0
    bytes_read: int = 0
    stripes_total: int = 0
    stripes_pruned: int = 0

    def merge(self, other: "ScanStats") -> None:
        self.rows_read += other.rows_read
        self.bytes_read += other.bytes_read
        self.stripes_total += other.stripes_total
        self.stripes_pruned += other.stripes_pruned


def write_rowtext(rows, schema: TableSchema, path, *, partition_id: int = 0,
                  worker_id: int = 0) -> PartitionDescriptor:
    """Write rows to one block file; byte-deterministic for identical input."""
    path = Path(path)
    n = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            for row in rows:
                fields = []
                for col, value in zip(schema.columns, row):
                    check_value(value, col.ctype, col.nullable, col.name)
                    text = format_value(value, col.ctype)
                    if "|" in text or "\n" in text or "\r" in text:
                        raise IllegalCharacter(
                            f"column {col.name} value {text!r} contains a delimiter"
                        )
                    fields.append(text)
                f.write("|".join(fields))
                f.write("\n")
                n += 1
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return PartitionDescriptor(
        partition_id=partition_id,
        worker_id=worker_id,
        path=str(path),
        format=StorageFormat.ROWTEXT,
        row_count=n,
    )


def _convert_column(fields: list[str], ctype: ColumnType, base_line: int) -> C.Column:
    """Typed column from raw text fields; empty field decodes to NULL."""
    if ctype is ColumnType.STRING:
        data = np.array(fields, dtype=object)
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
            src = u if all_valid else np.where(valid, u, "0")
            data = src.astype(np.int64)
        elif ctype is ColumnType.FLOAT64:
            src = u if all_valid else np.where(valid, u, "0")
            data = src.astype(np.float64)
        else:  # DATE
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
                raise MalformedRecord(
                    f"unparsable {ctype.value} value {text!r}", base_line + j
                ) from None
        raise
    return C.NumColumn(data, None if all_valid else valid)


def scan_rowtext_columnar(path, schema: TableSchema, needed: list[int],
                          batch_rows: int = DEFAULT_BATCH_ROWS):
    """Yield ``(n_rows, {col_index: Column})`` batches plus final stats.

    Generator yields batches of at most ``batch_rows`` rows; the returned
    object's ``stats`` attribute is complete once iteration finishes. Only
    ``needed`` columns are converted; arity is validated on every record.
    """
    return _RowtextScan(path, schema, needed, batch_rows)


class _RowtextScan:
    def __init__(self, path, schema, needed, batch_rows):
        self.path = Path(path)
        self.schema = schema
        self.needed = sorted(set(needed))
        self.batch_rows = batch_rows
        self.stats = ScanStats()

    def __iter__(self):
        arity = self.schema.arity
        seps = arity - 1
        try:
            size = os.path.getsize(self.path)
            f = open(self.path, "r", encoding="utf-8", newline="\n")
        except OSError as e:
            raise IoFailure(f"cannot read {self.path}: {e}") from e
        self.stats.bytes_read = size
        line_no = 0
        with f:
            while True:
                lines = list(islice(f, self.batch_rows))
                if not lines:
                    break
                base_line = line_no + 1
                if not self.needed:
                    # arity check without materializing fields
                    for line in lines:
                        line_no += 1
                        if line.count("|") != seps:
                            raise MalformedRecord(
                                f"expected {arity} fields, got {line.count('|') + 1}",
                                line_no,
                            )
                    self.stats.rows_read += len(lines)
                    yield len(lines), {}
                    continue
                per_col: list[list[str]] = [[] for _ in self.needed]
                for line in lines:
                    line_no += 1
                    if line.endswith("\n"):
                        line = line[:-1]
                    parts = line.split("|")
                    if len(parts) != arity:
                        raise MalformedRecord(
                            f"expected {arity} fields, got {len(parts)}", line_no
                        )
                    for k, i in enumerate(self.needed):
                        per_col[k].append(parts[i])
                self.stats.rows_read += len(lines)
                cols = {
                    i: _convert_column(per_col[k], self.schema.columns[i].ctype, base_line)
                    for k, i in enumerate(self.needed)
                }
                yield len(lines), cols


def scan_rowtext(path, schema: TableSchema, projection=None, predicate=(),
                 batch_rows: int = DEFAULT_BATCH_ROWS):
    """Row-tuple scan: yields batches (lists of tuples) of matching rows.

    ``projection`` is a list of column indices (None = all); ``predicate``
    a sequence of resolved conjuncts. Returns the scan object; iterate it
    for batches and read ``.stats`` afterwards.
    """
    return _RowScan(path, schema, projection, predicate, batch_rows)


class _RowScan:
    def __init__(self, path, schema, projection, predicate, batch_rows):
        self.stats = ScanStats()
        self._path = path
        self._schema = schema
        self._projection = list(range(schema.arity)) if projection is None else list(projection)
        self._predicate = tuple(predicate)
        self._batch_rows = batch_rows

    def __iter__(self):
        needed = sorted(set(self._projection) | {c.col for c in self._predicate})
        inner = scan_rowtext_columnar(self._path, self._schema, needed, self._batch_rows)
        self.stats = inner.stats
        types = [c.ctype for c in self._schema.columns]
        for n_rows, cols in inner:
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
