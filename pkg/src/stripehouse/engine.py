"""Plan execution on a pool of executors * cores worker slots.

Stages run in plan order with a barrier between stages; tasks inside a
stage are independent. The shuffle staging area is partitioned by
(op, bucket, producer-task) so producers never contend; buckets past the
per-executor row budget spill to ``<root>/shuffle/``.

Determinism: task sets depend only on the plan; every merge walks inputs
in producer-task order; SUM/AVG accumulate with exact summation
(math.fsum over the group's full value multiset), so results are
bit-identical across executor counts, prune on/off, and storage formats.

Timing uses a monotonic clock.
"""

from __future__ import annotations

import math
import os
import pickle
import shutil
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import columns as C
from . import stripefile
from .errors import EngineBusy, IoFailure, MemoryBudgetExceeded
from .planner import (
    AggFinalOp,
    AggPartialOp,
    AggSpec,
    ExecConfig,
    JoinOp,
    MetadataCountOp,
    PhysicalPlan,
    ScanOp,
    ShuffleOp,
)
from .predicate import OPS, row_passes
from .rowtext import ScanStats, scan_rowtext_columnar
from .schema import ColumnType, StorageFormat, resolve_data_root
from .sql import ResolvedQuery

ENGINE_BATCH_ROWS = 65536

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def fnv1a64_int(value: int) -> int:
    return fnv1a64(int(value).to_bytes(8, "little", signed=True))


def _fnv_int64_vector(keys: np.ndarray) -> np.ndarray:
    """FNV-1a over each key's 8 little-endian bytes, vectorized."""
    b = keys.astype("<i8", copy=False).view(np.uint8).reshape(-1, 8)
    h = np.full(len(keys), FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for j in range(8):
        h = (h ^ b[:, j].astype(np.uint64)) * prime
    return h


@dataclass
class Batch:
    n_rows: int
    cols: list  # C.Column per output position


@dataclass
class QueryMetrics:
    response_time_s: float = 0.0
    rows_read: int = 0
    bytes_read: int = 0
    stripes_total: int = 0
    stripes_pruned: int = 0
    shuffle_rows: int = 0
    peak_group_count: int = 0

    def to_dict(self) -> dict:
        return {
            "response_time_s": self.response_time_s,
            "rows_read": self.rows_read,
            "bytes_read": self.bytes_read,
            "stripes_total": self.stripes_total,
            "stripes_pruned": self.stripes_pruned,
            "shuffle_rows": self.shuffle_rows,
            "peak_group_count": self.peak_group_count,
        }


@dataclass
class ResultTable:
    columns: tuple[str, ...]
    types: tuple[ColumnType, ...]
    rows: list[tuple]


_OUT_TYPE = {
    "count_star": ColumnType.INT64,
    "count_distinct": ColumnType.INT64,
    "sum": ColumnType.FLOAT64,
    "avg": ColumnType.FLOAT64,
}


def result_types(query: ResolvedQuery) -> tuple[ColumnType, ...]:
    types = []
    agg_iter = iter(query.aggregates)
    for is_bucket in query.select_is_bucket:
        if is_bucket:
            types.append(ColumnType.INT64)
        else:
            agg = next(agg_iter)
            types.append(_OUT_TYPE.get(agg.kind) or agg.column.ctype)
    return tuple(types)


# --- aggregation state ---
# Partial state per group: one slot per AggSpec.
#   count_star      -> int
#   count_distinct  -> np.ndarray of unique non-NULL values
#   sum / avg       -> (list[np.ndarray] raw values, int non-null count)
#   min / max       -> scalar or None


def _canonical_nan(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.float64:
        nan = np.isnan(arr)
        if nan.any():
            arr = arr.copy()
            arr[nan] = np.nan
    return arr


def _spec_partial(spec: AggSpec, batch_cols: list, idx_groups, budget_tracker):
    """Given per-group row index arrays, make per-group partial slots."""
    out = {}
    if spec.kind == "count_star":
        for g, idx in idx_groups.items():
            out[g] = len(idx)
        return out
    col = batch_cols[spec.input_pos]
    if isinstance(col, C.LazyStrColumn):
        col = col.decode()
        batch_cols[spec.input_pos] = col
    data, valid = col.data, col.valid
    for g, idx in idx_groups.items():
        d = data[idx]
        v = None if valid is None else valid[idx]
        if v is not None:
            d = d[v]
        if spec.kind == "count_distinct":
            uniq = np.unique(_canonical_nan(d)) if len(d) else d[:0]
            budget_tracker.add(len(uniq))
            out[g] = uniq
        elif spec.kind in ("sum", "avg"):
            vals = d.astype(np.float64, copy=False)
            out[g] = ([vals], len(vals))
        else:  # min / max
            if d.dtype == np.float64:
                d = d[~np.isnan(d)]
            if len(d) == 0:
                out[g] = None
            elif spec.kind == "min":
                out[g] = d.min()
            else:
                out[g] = d.max()
    return out


def _merge_spec(spec: AggSpec, a, b):
    if spec.kind == "count_star":
        return a + b
    if spec.kind == "count_distinct":
        return np.unique(np.concatenate([a, b]))
    if spec.kind in ("sum", "avg"):
        return (a[0] + b[0], a[1] + b[1])
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b) if spec.kind == "min" else max(a, b)


def _finalize_spec(spec: AggSpec, state):
    if spec.kind == "count_star":
        return int(state)
    if spec.kind == "count_distinct":
        return int(len(state))
    if spec.kind in ("sum", "avg"):
        arrays, count = state
        if count == 0:
            return None
        total = math.fsum(x for arr in arrays for x in arr.tolist())
        if spec.kind == "sum":
            return total
        return total / count
    if state is None:
        return None
    if isinstance(state, (np.floating,)):
        return float(state)
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


class _BudgetTracker:
    """Per-task distinct-set budget; raises past the configured row budget."""

    def __init__(self, budget: int):
        self.budget = budget
        self.used = 0

    def add(self, n: int) -> None:
        self.used += n
        if self.used > self.budget:
            raise MemoryBudgetExceeded(
                f"distinct set of {self.used} rows exceeds budget {self.budget}"
            )


def _group_indices(gid: np.ndarray, in_range: np.ndarray | None) -> dict[int, np.ndarray]:
    """Map group id -> row indices, vectorized groupby."""
    if in_range is not None:
        base = np.flatnonzero(in_range)
        g = gid[base]
    else:
        base = None
        g = gid
    if len(g) == 0:
        return {}
    order = np.argsort(g, kind="stable")
    gs = g[order]
    bounds = np.flatnonzero(np.diff(gs)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [len(gs)]))
    out = {}
    for s, e in zip(starts, ends):
        rows = order[s:e]
        if base is not None:
            rows = base[rows]
        out[int(gs[s])] = rows
    return out


class Engine:
    """Executes physical plans; one query at a time per engine object."""

    def __init__(self, data_root=None):
        self.data_root = resolve_data_root(data_root)
        self._busy = threading.Lock()
        self.last_spill_events = 0

    # --- public API ---

    def execute(self, plan: PhysicalPlan, config: ExecConfig) -> tuple[ResultTable, QueryMetrics]:
        if not self._busy.acquire(blocking=False):
            raise EngineBusy("engine already running a query")
        try:
            t0 = time.perf_counter()
            result, metrics = self._run(plan, config)
            metrics.response_time_s = time.perf_counter() - t0
            return result, metrics
        finally:
            self._busy.release()

    # --- internals ---

    def _run(self, plan: PhysicalPlan, config: ExecConfig):
        metrics = QueryMetrics(
            stripes_total=plan.stripes_total,
            stripes_pruned=plan.stripes_pruned,
        )
        query = plan.query
        if plan.is_metadata_count:
            op = plan.stages[0][0]
            total = 0
            for path in op.paths:
                footer = plan.footers.get(path) or stripefile.read_footer(path)
                total += footer.row_count
                metrics.bytes_read += footer.bytes_read
                metrics.stripes_total += len(footer.stripes)
            result = ResultTable(
                columns=query.select_labels,
                types=result_types(query),
                rows=[(total,)],
            )
            return result, metrics

        spill_dir = self.data_root / "shuffle" / uuid.uuid4().hex
        state = _QueryState(plan, config, metrics, spill_dir)
        pool = ThreadPoolExecutor(max_workers=config.slots)
        try:
            for stage in plan.stages:
                tasks = []
                for op in stage:
                    tasks.extend(state.tasks_for(op))
                if not tasks:
                    continue
                # propagate the first failure, keep the process alive
                for _ in pool.map(lambda fn: fn(), tasks):
                    pass
            rows = state.collect_output()
            self.last_spill_events = state.spill_events
        finally:
            pool.shutdown(wait=True)
            if spill_dir.exists():
                shutil.rmtree(spill_dir, ignore_errors=True)
        result = ResultTable(
            columns=query.select_labels,
            types=result_types(query),
            rows=rows,
        )
        return result, metrics


class _QueryState:
    """Mutable run state: op outputs, shuffle staging, metrics."""

    def __init__(self, plan: PhysicalPlan, config: ExecConfig, metrics: QueryMetrics,
                 spill_dir):
        self.plan = plan
        self.config = config
        self.metrics = metrics
        self.spill_dir = spill_dir
        self.reducers = config.slots
        self.budget = config.executor_mem_rows
        # op_id -> {task_id: [Batch]}
        self.op_batches: dict[int, dict[int, list[Batch]]] = {}
        # (op_id, bucket) -> {producer: [Batch] | ('spill', path)}
        self.staging: dict[tuple[int, int], dict[int, object]] = {}
        self.bucket_rows: dict[tuple[int, int], int] = {}
        # op_id -> {task_id: {group: [spec states]}}
        self.partials: dict[int, dict[int, dict]] = {}
        # (op_id, bucket) -> {producer: {group: [spec states]}}
        self.partial_staging: dict[tuple[int, int], dict[int, dict]] = {}
        self.final_rows: dict[int, list] = {}
        self.spill_events = 0
        self._lock = threading.Lock()
        self._metrics_lock = threading.Lock()

    # --- task generation per op ---

    def tasks_for(self, op):
        if isinstance(op, ScanOp):
            self.op_batches[op.op_id] = {}
            return [
                (lambda o=op, t=i: self._scan_task(o, t))
                for i in range(len(op.tasks))
            ]
        if isinstance(op, ShuffleOp):
            if op.key_pos is None:
                return [lambda o=op: self._partial_shuffle_task(o)]
            producers = sorted(self.op_batches[op.input_op])
            return [
                (lambda o=op, p=pid: self._shuffle_task(o, p))
                for pid in producers
            ]
        if isinstance(op, JoinOp):
            self.op_batches[op.op_id] = {}
            return [
                (lambda o=op, b=i: self._join_task(o, b))
                for i in range(self.reducers)
            ]
        if isinstance(op, AggPartialOp):
            self.partials[op.op_id] = {}
            task_ids = sorted(self.op_batches[op.input_op])
            return [
                (lambda o=op, t=tid: self._agg_partial_task(o, t))
                for tid in task_ids
            ]
        if isinstance(op, AggFinalOp):
            self.final_rows = {}
            input_op = self._op_by_id(op.input_op)
            if isinstance(input_op, ShuffleOp):
                buckets = sorted(
                    b for (oid, b) in self.partial_staging if oid == op.input_op
                )
                if not buckets and not self.plan.query.bucket:
                    buckets = [0]
                return [
                    (lambda o=op, b=bkt: self._agg_final_task(o, b))
                    for bkt in buckets
                ]
            return [lambda o=op: self._agg_final_merge_all(o)]
        raise AssertionError(f"unexpected op {op}")

    def _op_by_id(self, op_id: int):
        for op in self.plan.ops():
            if getattr(op, "op_id", None) == op_id:
                return op
        raise AssertionError(f"no op {op_id}")

    # --- scan ---

    def _scan_task(self, op: ScanOp, task_idx: int):
        task = op.tasks[task_idx]
        pred_cols = {c.col for c in op.conjuncts}
        needed = sorted(set(op.projection) | pred_cols)
        schema = None
        batches: list[Batch] = []
        stats = ScanStats()
        if op.fmt is StorageFormat.STRIPE:
            footer = self.plan.footers[task.path]
            cols, nbytes = stripefile.read_stripe_columns(
                task.path, footer, task.stripe_index, needed
            )
            stats.bytes_read += nbytes
            stats.rows_read += task.rows
            b = self._apply_predicate(op, cols, task.rows)
            if b is not None:
                batches.append(b)
        else:
            inner = scan_rowtext_columnar(task.path, self._schema_for(op), needed,
                                          ENGINE_BATCH_ROWS)
            for n_rows, cols in inner:
                b = self._apply_predicate(op, cols, n_rows)
                if b is not None:
                    batches.append(b)
            stats = inner.stats
        with self._metrics_lock:
            self.metrics.rows_read += stats.rows_read
            self.metrics.bytes_read += stats.bytes_read
        self.op_batches[op.op_id][task_idx] = batches

    def _schema_for(self, op: ScanOp):
        for entry in self.plan.query.entries:
            if entry.schema.table_name == op.table:
                return entry.schema
        raise AssertionError(op.table)

    def _apply_predicate(self, op: ScanOp, cols: dict, n_rows: int) -> Batch | None:
        mask = C.predicate_mask(cols, op.conjuncts)
        if mask is not None:
            idx = np.flatnonzero(mask)
            if len(idx) == 0:
                return None
            out = [C.take(cols[i], idx) for i in op.projection]
            return Batch(len(idx), out)
        return Batch(n_rows, [cols[i] for i in op.projection])

    # --- shuffle ---

    def _shuffle_task(self, op: ShuffleOp, producer: int):
        batches = self.op_batches[op.input_op][producer]
        r = self.reducers
        parts: dict[int, list[Batch]] = {}
        rows_moved = 0
        for batch in batches:
            key_col = batch.cols[op.key_pos]
            if isinstance(key_col, C.LazyStrColumn):
                key_col = key_col.decode()
                batch.cols[op.key_pos] = key_col
            if isinstance(key_col, C.StrColumn):
                h = np.fromiter(
                    (
                        fnv1a64(v.encode("utf-8")) if v is not None else 0
                        for v in key_col.data
                    ),
                    dtype=np.uint64,
                    count=batch.n_rows,
                )
            else:
                h = _fnv_int64_vector(key_col.data)
            buckets = (h % np.uint64(r)).astype(np.int64)
            valid = key_col.valid
            for b in np.unique(buckets):
                sel = buckets == b
                if valid is not None:
                    sel &= valid  # NULL keys dropped before shuffle
                idx = np.flatnonzero(sel)
                if len(idx) == 0:
                    continue
                sub = Batch(len(idx), [C.take(c, idx) for c in batch.cols])
                parts.setdefault(int(b), []).append(sub)
                rows_moved += len(idx)
        for b, sub_batches in parts.items():
            self._stage_bucket(op.op_id, b, producer, sub_batches)
        with self._metrics_lock:
            self.metrics.shuffle_rows += rows_moved

    def _stage_bucket(self, op_id: int, bucket: int, producer: int,
                      batches: list[Batch]) -> None:
        n = sum(b.n_rows for b in batches)
        key = (op_id, bucket)
        with self._lock:
            total = self.bucket_rows.get(key, 0) + n
            self.bucket_rows[key] = total
            slot = self.staging.setdefault(key, {})
        if total > self.budget:
            path = self.spill_dir / f"{op_id}-{bucket}-{producer}.pkl"
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                with open(path, "wb") as f:
                    pickle.dump(batches, f, protocol=pickle.HIGHEST_PROTOCOL)
            except OSError as e:
                raise IoFailure(f"cannot spill shuffle bucket: {e}") from e
            with self._lock:
                self.spill_events += 1
            slot[producer] = ("spill", str(path))
        else:
            slot[producer] = batches

    def _load_bucket(self, op_id: int, bucket: int) -> list[Batch]:
        slot = self.staging.get((op_id, bucket), {})
        out: list[Batch] = []
        for producer in sorted(slot):
            entry = slot[producer]
            if isinstance(entry, tuple) and entry and entry[0] == "spill":
                try:
                    with open(entry[1], "rb") as f:
                        out.extend(pickle.load(f))
                except OSError as e:
                    raise IoFailure(f"cannot read spilled bucket: {e}") from e
            else:
                out.extend(entry)
        return out

    # --- join ---

    def _join_task(self, op: JoinOp, bucket: int):
        build = self._load_bucket(op.build_input, bucket)
        probe = self._load_bucket(op.probe_input, bucket)
        out: list[Batch] = []
        build_rows = sum(b.n_rows for b in build)
        if build_rows > self.budget:
            raise MemoryBudgetExceeded(
                f"join build side of {build_rows} rows exceeds budget {self.budget}"
            )
        if build and probe:
            out_batch = self._hash_join(op, build, probe)
            if out_batch is not None:
                out.append(out_batch)
        self.op_batches[op.op_id][bucket] = out

    def _hash_join(self, op: JoinOp, build: list[Batch], probe: list[Batch]) -> Batch | None:
        bkey_col = _concat_cols([b.cols[op.build_key_pos] for b in build])
        build_cols = [
            _concat_cols([b.cols[p] for b in build]) for p in op.build_out
        ]
        if isinstance(bkey_col, C.StrColumn):
            table: dict[str, list[int]] = {}
            for i, v in enumerate(bkey_col.data):
                table.setdefault(v, []).append(i)
            probe_idx_parts = []
            build_idx_parts = []
            probe_cols_parts = [[] for _ in op.probe_out]
            offset = 0
            for pb in probe:
                pkey = pb.cols[op.probe_key_pos]
                if isinstance(pkey, C.LazyStrColumn):
                    pkey = pkey.decode()
                pi, bi = [], []
                for i, v in enumerate(pkey.data):
                    hits = table.get(v)
                    if hits:
                        pi.extend([i] * len(hits))
                        bi.extend(hits)
                if pi:
                    pidx = np.asarray(pi, dtype=np.int64)
                    bidx = np.asarray(bi, dtype=np.int64)
                    probe_idx_parts.append(pidx + offset)
                    build_idx_parts.append(bidx)
                    for k, p in enumerate(op.probe_out):
                        probe_cols_parts[k].append(C.take(pb.cols[p], pidx))
                offset += pb.n_rows
            if not probe_idx_parts:
                return None
            build_idx = np.concatenate(build_idx_parts)
            out_cols = [
                _concat_cols(parts) for parts in probe_cols_parts
            ] + [C.take(bc, build_idx) for bc in build_cols]
            n = len(build_idx)
            return Batch(n, out_cols)

        bkeys = bkey_col.data
        order = np.argsort(bkeys, kind="stable")
        skeys = bkeys[order]
        pkey_col = _concat_cols([b.cols[op.probe_key_pos] for b in probe])
        pkeys = pkey_col.data
        lo = np.searchsorted(skeys, pkeys, side="left")
        hi = np.searchsorted(skeys, pkeys, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            return None
        probe_idx = np.repeat(np.arange(len(pkeys)), counts)
        starts = np.repeat(lo, counts)
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
        within = np.arange(total) - np.repeat(offsets, counts)
        build_idx = order[starts + within]
        probe_cols = [
            C.take(_concat_cols([b.cols[p] for b in probe]), probe_idx)
            for p in op.probe_out
        ]
        out_cols = probe_cols + [C.take(bc, build_idx) for bc in build_cols]
        return Batch(total, out_cols)

    # --- aggregation ---

    def _agg_partial_task(self, op: AggPartialOp, task_id: int):
        batches = self.op_batches[op.input_op][task_id]
        tracker = _BudgetTracker(self.budget)
        merged: dict[int, list] = {}
        groups_seen = 0
        for batch in batches:
            idx_groups = self._bucketize(op, batch)
            for si, spec in enumerate(op.specs):
                part = _spec_partial(spec, batch.cols, idx_groups, tracker)
                for g, st in part.items():
                    slot = merged.get(g)
                    if slot is None:
                        slot = [None] * len(op.specs)
                        merged[g] = slot
                    if slot[si] is None:
                        slot[si] = st
                    else:
                        slot[si] = _merge_spec(spec, slot[si], st)
        groups_seen = len(merged)
        with self._metrics_lock:
            if groups_seen > self.metrics.peak_group_count:
                self.metrics.peak_group_count = groups_seen
        if merged:
            self.partials[op.op_id][task_id] = merged

    def _bucketize(self, op: AggPartialOp, batch: Batch) -> dict[int, np.ndarray]:
        if op.bucket_pos is None:
            return {0: np.arange(batch.n_rows)}
        col = batch.cols[op.bucket_pos]
        edges = np.asarray(op.bucket_edges, dtype=np.float64)
        data = col.data.astype(np.float64, copy=False)
        gid = np.searchsorted(edges, data, side="right") - 1
        in_range = (gid >= 0) & (gid < len(edges) - 1)
        # NULL never enters a bucket; NaN falls out via searchsorted -> k
        if col.valid is not None:
            in_range &= col.valid
        return _group_indices(gid, in_range)

    def _partial_shuffle_task(self, op: ShuffleOp):
        """Route partial groups to reducers by group-key hash."""
        r = self.reducers
        moved = 0
        for task_id in sorted(self.partials.get(op.input_op, {})):
            shard: dict[int, dict] = {}
            for g, states in self.partials[op.input_op][task_id].items():
                b = fnv1a64_int(g) % r if self.plan.query.bucket else 0
                shard.setdefault(b, {})[g] = states
                moved += 1
            for b, groups in shard.items():
                with self._lock:
                    slot = self.partial_staging.setdefault((op.op_id, b), {})
                slot[task_id] = groups
        with self._metrics_lock:
            self.metrics.shuffle_rows += moved

    def _agg_final_task(self, op: AggFinalOp, bucket: int):
        slot = self.partial_staging.get((op.input_op, bucket), {})
        self._finalize(op, [slot[t] for t in sorted(slot)], bucket_key=bucket)

    def _agg_final_merge_all(self, op: AggFinalOp):
        shards = self.partials.get(op.input_op, {})
        self._finalize(op, [shards[t] for t in sorted(shards)], bucket_key=0)

    def _finalize(self, op: AggFinalOp, shards: list[dict], bucket_key: int):
        merged: dict[int, list] = {}
        for shard in shards:
            for g, states in shard.items():
                slot = merged.get(g)
                if slot is None:
                    merged[g] = list(states)
                else:
                    for si, spec in enumerate(op.specs):
                        if states[si] is None:
                            continue
                        if slot[si] is None:
                            slot[si] = states[si]
                        else:
                            slot[si] = _merge_spec(spec, slot[si], states[si])
        with self._metrics_lock:
            if len(merged) > self.metrics.peak_group_count:
                self.metrics.peak_group_count = len(merged)
        if not op.grouped and not merged and bucket_key == 0:
            merged[0] = [self._empty_state(spec) for spec in op.specs]
        rows = []
        query = self.plan.query
        for g in sorted(merged):
            states = merged[g]
            finals = [
                _finalize_spec(spec, st) if st is not None else self._empty_value(spec)
                for spec, st in zip(op.specs, states)
            ]
            row = []
            agg_i = 0
            for is_bucket in query.select_is_bucket:
                if is_bucket:
                    row.append(int(g))
                else:
                    row.append(finals[agg_i])
                    agg_i += 1
            rows.append(tuple(row))
        with self._lock:
            self.final_rows[bucket_key] = rows

    @staticmethod
    def _empty_state(spec: AggSpec):
        if spec.kind == "count_star":
            return 0
        if spec.kind == "count_distinct":
            return np.empty(0, dtype=object)
        if spec.kind in ("sum", "avg"):
            return ([], 0)
        return None

    @staticmethod
    def _empty_value(spec: AggSpec):
        if spec.kind in ("count_star", "count_distinct"):
            return 0
        return None

    def collect_output(self) -> list[tuple]:
        rows: list[tuple] = []
        for b in sorted(self.final_rows):
            rows.extend(self.final_rows[b])
        if self.plan.query.bucket:
            pos = list(self.plan.query.select_is_bucket).index(True)
            rows.sort(key=lambda r: r[pos])
        return rows


def _concat_cols(cols: list) -> C.Column:
    cols = [c.decode() if isinstance(c, C.LazyStrColumn) else c for c in cols]
    if len(cols) == 1:
        return cols[0]
    n = sum(len(c) for c in cols)
    if any(c.valid is not None for c in cols):
        valid = np.concatenate([
            c.valid if c.valid is not None else np.ones(len(c), dtype=bool)
            for c in cols
        ])
    else:
        valid = None
    data = np.concatenate([c.data for c in cols])
    if isinstance(cols[0], C.StrColumn):
        return C.StrColumn(data, valid)
    return C.NumColumn(data, valid)


def execute(plan: PhysicalPlan, config: ExecConfig, data_root=None):
    """One-shot convenience wrapper around Engine.execute."""
    return Engine(data_root).execute(plan, config)


# --- brute-force oracle ---

def brute_force(query: ResolvedQuery, tables: dict[str, list[tuple]]) -> ResultTable:
    """Single-threaded reference evaluator over raw row tuples.

    ``tables`` maps table name -> full row list. Filter, nested hash join,
    bucket, aggregate; same output ordering contract as execute().
    """
    names = query.table_names
    filtered = []
    for pos, name in enumerate(names):
        rows = tables[name]
        cs = query.conjuncts[pos]
        filtered.append([r for r in rows if row_passes(cs, r)] if cs else list(rows))

    if query.join_cols is not None:
        left_key, right_key = query.join_cols
        build: dict = {}
        for r in filtered[1]:
            k = r[right_key.index]
            if k is None:
                continue
            build.setdefault(k, []).append(r)
        joined = []
        for r in filtered[0]:
            k = r[left_key.index]
            if k is None:
                continue
            for rr in build.get(k, ()):
                joined.append((r, rr))

        def get(col):
            def g(pair):
                return pair[col.table_pos][col.index]
            return g
    else:
        joined = filtered[0]

        def get(col):
            def g(row):
                return row[col.index]
            return g

    k_groups = None
    edges = None
    if query.bucket:
        edges = [float(e) for e in query.bucket.edges]
        k_groups = len(edges) - 1
        bucket_get = get(query.bucket.column)

    import bisect

    def group_of(item):
        if query.bucket is None:
            return 0
        v = bucket_get(item)
        if v is None:
            return None
        v = float(v)
        if math.isnan(v) or v < edges[0] or v >= edges[-1]:
            return None
        return bisect.bisect_right(edges, v) - 1

    groups: dict[int, list] = {}
    for item in joined:
        g = group_of(item)
        if g is None:
            continue
        groups.setdefault(g, []).append(item)
    if query.bucket is None and not groups:
        groups[0] = []

    getters = [None if a.column is None else get(a.column) for a in query.aggregates]
    out_rows = []
    for g in sorted(groups):
        items = groups[g]
        finals = []
        for agg, getter in zip(query.aggregates, getters):
            if agg.kind == "count_star":
                finals.append(len(items))
                continue
            vals = [getter(it) for it in items]
            vals = [v for v in vals if v is not None]
            if agg.kind == "count_distinct":
                seen = set()
                for v in vals:
                    if isinstance(v, float) and math.isnan(v):
                        seen.add("__nan__")
                    else:
                        seen.add(v)
                finals.append(len(seen))
            elif agg.kind in ("sum", "avg"):
                if not vals:
                    finals.append(None)
                else:
                    total = math.fsum(float(v) for v in vals)
                    finals.append(total if agg.kind == "sum" else total / len(vals))
            else:
                nn = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
                if not nn:
                    finals.append(None)
                else:
                    finals.append(min(nn) if agg.kind == "min" else max(nn))
        row = []
        agg_i = 0
        for is_bucket in query.select_is_bucket:
            if is_bucket:
                row.append(g)
            else:
                row.append(finals[agg_i])
                agg_i += 1
        out_rows.append(tuple(row))
    return ResultTable(
        columns=query.select_labels,
        types=result_types(query),
        rows=out_rows,
    )
