"""Partition-parallel two-pass scoring over a timestamped edge log.

The log is split into K contiguous tick-range partitions (a tick never
spans two partitions).  Pass 1 builds, per partition and in parallel,
one frozen sketch triple (edge + source-node + destination-node)
summarizing that partition's counts.  Pass 2 scores each partition's
events, also in parallel: a worker replays its partition tick by tick
against fresh working sketches to recover the current-count estimate
``a_hat``, and combines the frozen summaries of all earlier partitions
with the replayed local counts to recover the cumulative estimate
``s_hat``.  Scores depend only on (events, config), never on worker
count or scheduling.

Cumulative counts can be queried two ways.  ``merged`` folds earlier
summaries into one prefix sketch per partition (built incrementally,
K-1 merges total); ``per_partition`` sums per-row counts across the
individual summaries at query time without materializing a merge.  For
Count-Min the two give bit-identical answers because merging is a
pointwise counter sum; for Frequent-Items they can diverge (a merge
may purge), and both remain valid upper bounds.

In the plain variant working counts clear at tick boundaries and
``s_hat`` accumulates raw totals, which makes the output byte-identical
to a single-threaded reference run for any K.  In the relational
variant working counts decay at boundaries and the frozen summaries
are decayed accumulations, so history is recency-weighted; the decay
window is scoped to a partition.

Memory is constant in the stream: the persistent sketch state is
exactly 3*(K+1) sketches in merged mode (K summary triples plus one
prefix triple).  Pass-2 workers keep a bounded working triple each,
reported separately as scratch.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from . import scoring
from .sketch import (
    KIND_EDGE,
    KIND_NODE,
    CountMinSketch,
    FrequentItemsSketch,
    SketchKey,
    bucket_indices,
    construction_count,
)

__all__ = [
    "EdgeEvent",
    "EdgeBatch",
    "PipelineConfig",
    "PartitionSpan",
    "PartitionState",
    "ScoreBatch",
    "PrefixCS",
    "RunStats",
    "PipelineResult",
    "partition_stream",
    "pass1_build_ce",
    "compute_prefix_cs",
    "pass2_score",
    "run_pipeline",
    "write_scores_csv",
    "write_timings_csv",
]

_LANES = ("edge", "src", "dst")
_LANE_KIND = {"edge": KIND_EDGE, "src": KIND_NODE, "dst": KIND_NODE}


@dataclass(frozen=True)
class EdgeEvent:
    """One log record: a directed edge at a time tick."""

    src: int
    dst: int
    tick: int
    seq: int = 0


class EdgeBatch:
    """Columnar view of an edge log (parallel int64 arrays)."""

    __slots__ = ("src", "dst", "tick", "seq")

    def __init__(self, src, dst, tick, seq=None):
        self.src = np.ascontiguousarray(src, dtype=np.int64)
        self.dst = np.ascontiguousarray(dst, dtype=np.int64)
        self.tick = np.ascontiguousarray(tick, dtype=np.int64)
        n = self.src.shape[0]
        if self.dst.shape[0] != n or self.tick.shape[0] != n:
            raise ValueError("src, dst and tick must have equal lengths")
        if n and self.tick.min() < 0:
            raise ValueError("timestamps must be non-negative")
        if seq is None:
            self.seq = np.arange(n, dtype=np.int64)
        else:
            self.seq = np.ascontiguousarray(seq, dtype=np.int64)
            if self.seq.shape[0] != n:
                raise ValueError("seq length mismatch")

    @classmethod
    def from_events(cls, events: Iterable) -> "EdgeBatch":
        rows = [(e.src, e.dst, e.tick, getattr(e, "seq", i)) for i, e in enumerate(events)]
        if not rows:
            return cls([], [], [])
        src, dst, tick, seq = zip(*rows)
        return cls(src, dst, tick, seq)

    def __len__(self) -> int:
        return self.src.shape[0]

    def __iter__(self) -> Iterator[EdgeEvent]:
        for s, d, t, q in zip(
            self.src.tolist(), self.dst.tolist(), self.tick.tolist(), self.seq.tolist()
        ):
            yield EdgeEvent(s, d, t, q)

    def is_time_sorted(self) -> bool:
        return bool(np.all(np.diff(self.tick) >= 0)) if len(self) > 1 else True

    def time_sorted(self) -> "EdgeBatch":
        """Stable sort by (tick, seq); duplicates keep record order."""
        if self.is_time_sorted():
            return self
        order = np.lexsort((self.seq, self.tick))
        return EdgeBatch(self.src[order], self.dst[order], self.tick[order], self.seq[order])


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on besides the events themselves.

    ``num_workers`` affects wall time only; outputs are byte-identical
    for any worker count.  ``pass1_shards`` optionally splits each
    pass-1 tick batch into that many deterministically merged chunks
    (default 1 = off).
    """

    variant: str = "cms"
    relational: bool = True
    rows: int = 2
    buckets: int = 719
    max_map_size: int = 1024
    load_factor: float = 0.75
    num_partitions: int = 8
    num_workers: int = 1
    alpha: float = 0.6
    decay_mode: str = "constant"
    query_mode: str = "merged"
    master_seed: int = 42
    pass1_shards: int = 1

    def __post_init__(self):
        if self.variant not in ("cms", "fis"):
            raise ValueError(f"variant must be 'cms' or 'fis', got {self.variant!r}")
        if self.decay_mode not in ("constant", "inverse_tick"):
            raise ValueError(f"decay_mode must be 'constant' or 'inverse_tick', got {self.decay_mode!r}")
        if self.query_mode not in ("merged", "per_partition"):
            raise ValueError(f"query_mode must be 'merged' or 'per_partition', got {self.query_mode!r}")
        if self.rows < 1 or self.buckets < 1:
            raise ValueError("rows and buckets must be >= 1")
        m = self.max_map_size
        if m < 2 or m & (m - 1):
            raise ValueError(f"max_map_size must be a power of two >= 2, got {m}")
        if not 0.0 < self.load_factor < 1.0:
            raise ValueError(f"load_factor must be in (0, 1), got {self.load_factor}")
        if self.num_partitions < 1:
            raise ValueError("num_partitions must be >= 1")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.pass1_shards < 1:
            raise ValueError("pass1_shards must be >= 1")

    def lane_names(self) -> tuple[str, ...]:
        return _LANES if self.relational else ("edge",)


@dataclass(frozen=True)
class PartitionSpan:
    """A partition's tick range [tick_lo, tick_hi) and event range."""

    partition_id: int
    tick_lo: int
    tick_hi: int
    ev_lo: int
    ev_hi: int

    @property
    def num_events(self) -> int:
        return self.ev_hi - self.ev_lo


@dataclass
class PartitionState:
    """A partition's frozen summary sketches (edge + two node lanes)."""

    span: PartitionSpan
    ce_edge: Union[CountMinSketch, FrequentItemsSketch]
    ce_src_node: Union[CountMinSketch, FrequentItemsSketch]
    ce_dst_node: Union[CountMinSketch, FrequentItemsSketch]
    frozen: bool = False

    @property
    def partition_id(self) -> int:
        return self.span.partition_id

    def sketches(self) -> tuple:
        return (self.ce_edge, self.ce_src_node, self.ce_dst_node)

    def freeze(self) -> "PartitionState":
        self.frozen = True
        return self


class ScoreBatch:
    """Columnar scores, one row per event in original sequence order.

    ``tick`` is the dense 1-based tick index used by the statistic.
    ``s_lower`` is the lower cumulative bound (equal to ``s_hat`` for
    Count-Min, whose estimate is one-sided).
    """

    __slots__ = ("seq", "src", "dst", "tick", "score", "edge_score", "src_score",
                 "dst_score", "a_hat", "s_hat", "s_lower")

    def __init__(self, seq, src, dst, tick, score, edge_score, src_score, dst_score,
                 a_hat, s_hat, s_lower):
        self.seq = seq
        self.src = src
        self.dst = dst
        self.tick = tick
        self.score = score
        self.edge_score = edge_score
        self.src_score = src_score
        self.dst_score = dst_score
        self.a_hat = a_hat
        self.s_hat = s_hat
        self.s_lower = s_lower

    def __len__(self) -> int:
        return self.seq.shape[0]

    def __iter__(self) -> Iterator[scoring.ScoredEdge]:
        for i in range(len(self)):
            yield scoring.ScoredEdge(
                edge=EdgeEvent(int(self.src[i]), int(self.dst[i]), int(self.tick[i]),
                               int(self.seq[i])),
                score=float(self.score[i]),
                components=(float(self.edge_score[i]), float(self.src_score[i]),
                            float(self.dst_score[i])),
                a_hat=float(self.a_hat[i]),
                s_hat=float(self.s_hat[i]),
            )

    @classmethod
    def empty(cls) -> "ScoreBatch":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(zi, zi, zi, zi, z, z, z, z, z, z, z)

    @classmethod
    def concatenate(cls, parts: Sequence["ScoreBatch"]) -> "ScoreBatch":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__slots__))


@dataclass
class RunStats:
    """Timing and memory accounting for one pipeline run."""

    timings: list = field(default_factory=list)  # (phase, partition, worker, millis)
    wall_millis_by_phase: dict = field(default_factory=dict)
    persistent_sketch_count: int = 0
    scratch_sketch_count: int = 0
    persistent_sketch_bytes: int = 0
    num_partitions: int = 0
    num_workers: int = 0


@dataclass
class PipelineResult:
    scores: ScoreBatch
    stats: RunStats


# ---------------------------------------------------------------------------
# Partitioning

def _dense_ticks(batch: EdgeBatch) -> tuple[np.ndarray, np.ndarray]:
    """1-based dense tick ranks plus the sorted distinct raw timestamps."""
    uniq = np.unique(batch.tick)
    dense = (np.searchsorted(uniq, batch.tick) + 1).astype(np.int64)
    return dense, uniq


def _partition_spans(dense_sorted: np.ndarray, num_ticks: int, k: int) -> list[PartitionSpan]:
    n = dense_sorted.shape[0]
    if n == 0:
        return [PartitionSpan(p, 1, 1, 0, 0) for p in range(k)]
    group_start = np.flatnonzero(np.r_[True, np.diff(dense_sorted) != 0])
    group_end = np.r_[group_start[1:], n]
    num_groups = group_start.shape[0]
    spans = []
    g = 0
    cursor = 0
    for p in range(k):
        tick_lo = g + 1
        ev_lo = cursor
        # Integer-exact threshold: take tick groups until the cumulative
        # event count reaches (p+1)*n/k; the crossing group goes to the
        # earlier partition.
        while g < num_groups and cursor * k < (p + 1) * n:
            cursor = int(group_end[g])
            g += 1
        spans.append(PartitionSpan(p, tick_lo, g + 1, ev_lo, cursor))
    return spans


def partition_stream(events, num_partitions: int) -> list[PartitionSpan]:
    """Split a (tick, seq)-sorted log into K contiguous tick-range spans.

    Boundaries fall only between distinct ticks, spans cover all events
    exactly once, and sizes are balanced to within one tick group.
    Empty spans are legal (indivisible tick groups, K > #ticks, or an
    empty log).
    """
    if num_partitions < 1:
        raise ValueError("num_partitions must be >= 1")
    batch = _as_batch(events)
    if not batch.is_time_sorted():
        raise ValueError("events must be sorted by (tick, seq)")
    dense, _ = _dense_ticks(batch)
    return _partition_spans(dense, int(dense[-1]) if len(batch) else 0, num_partitions)


def _as_batch(events) -> EdgeBatch:
    if isinstance(events, EdgeBatch):
        return events
    return EdgeBatch.from_events(events)


# ---------------------------------------------------------------------------
# Worker context.  Set in the parent before pools are created; fork
# workers inherit it, spawn workers receive it via the initializer.

_CTX: dict = {}


def _set_ctx(ctx: dict) -> None:
    global _CTX
    _CTX = ctx


def _running_inclusive(idx_row: np.ndarray) -> np.ndarray:
    """Inclusive running occurrence count per equal index, in batch order.

    For unit-weight updates this is each event's own contribution plus
    all earlier same-bucket contributions within the batch, which is
    what an update-then-query loop would see.
    """
    n = idx_row.shape[0]
    order = np.argsort(idx_row, kind="stable")
    si = idx_row[order]
    starts = np.empty(n, dtype=bool)
    starts[0] = True
    starts[1:] = si[1:] != si[:-1]
    group_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    out = np.empty(n, dtype=np.float64)
    out[order] = np.arange(n, dtype=np.int64) - group_start + 1
    return out


def _tick_groups(ticks: np.ndarray) -> list[tuple[int, int, int]]:
    """(start, stop, tick_value) runs over a sorted tick slice."""
    n = ticks.shape[0]
    if n == 0:
        return []
    starts = np.flatnonzero(np.r_[True, np.diff(ticks) != 0])
    stops = np.r_[starts[1:], n]
    vals = ticks[starts]
    return list(zip(starts.tolist(), stops.tolist(), vals.tolist()))


def _sharded_add(grid_row: np.ndarray, idx: np.ndarray, shards: int) -> None:
    """Unit-weight scatter-add, optionally via ordered shard grids."""
    if shards <= 1 or idx.shape[0] < shards:
        np.add.at(grid_row, idx, 1.0)
        return
    bounds = np.linspace(0, idx.shape[0], shards + 1).astype(np.int64)
    for c in range(shards):
        part = np.zeros_like(grid_row)
        np.add.at(part, idx[bounds[c]:bounds[c + 1]], 1.0)
        grid_row += part  # fixed shard order keeps the result deterministic


def _lane_inputs(cfg: PipelineConfig, u: np.ndarray, v: np.ndarray) -> dict:
    zeros = np.uint64(0)
    lanes = {"edge": (KIND_EDGE, u, v), "src": (KIND_NODE, u, zeros), "dst": (KIND_NODE, v, zeros)}
    return {name: lanes[name] for name in cfg.lane_names()}


def _partition_slice(i: int):
    cfg = _CTX["cfg"]
    span = _CTX["spans"][i]
    lo, hi = span.ev_lo, span.ev_hi
    u = _CTX["src"][lo:hi]
    v = _CTX["dst"][lo:hi]
    tk = _CTX["dtick"][lo:hi]
    if hi > lo and (tk[0] < span.tick_lo or tk[-1] >= span.tick_hi):
        raise RuntimeError(
            f"partition {i} holds ticks outside [{span.tick_lo}, {span.tick_hi}) "
            "-- partitioning bug"
        )
    return cfg, span, u, v, tk


# ---------------------------------------------------------------------------
# Pass 1: frozen per-partition summaries

def _pass1_payload(i: int) -> dict:
    """Build partition i's summary counts (raw grids / map states).

    Plain mode accumulates raw counts.  Relational mode applies the
    decay factor at every tick boundary inside the partition, so the
    frozen summary is the decayed accumulation the scorer's replay will
    reproduce.  All three lanes are always built; the plain scorer just
    never queries the node lanes.
    """
    cfg, span, u, v, tk = _partition_slice(i)
    zeros = np.zeros(u.shape[0], dtype=np.int64)
    lanes = {"edge": (KIND_EDGE, u, v), "src": (KIND_NODE, u, zeros),
             "dst": (KIND_NODE, v, zeros)}
    if cfg.variant == "cms":
        idx = {
            name: bucket_indices(cfg.master_seed, cfg.rows, cfg.buckets, kind, a, b)
            for name, (kind, a, b) in lanes.items()
        }
        grids = {name: np.zeros((cfg.rows, cfg.buckets)) for name in _LANES}
        if not cfg.relational:
            for name in _LANES:
                for r in range(cfg.rows):
                    _sharded_add(grids[name][r], idx[name][r], cfg.pass1_shards)
        else:
            for g0, g1, tick in _tick_groups(tk):
                if g0:
                    f = scoring.decay_factor(cfg.alpha, cfg.decay_mode, tick)
                    for name in _LANES:
                        grids[name] *= f
                for name in _LANES:
                    for r in range(cfg.rows):
                        _sharded_add(grids[name][r], idx[name][r, g0:g1], cfg.pass1_shards)
        return grids

    sketches = {name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor) for name in _LANES}
    if not cfg.relational:
        for name, (kind, a, b) in lanes.items():
            sketches[name].update_many(kind, a, b)
    else:
        for g0, g1, tick in _tick_groups(tk):
            if g0:
                f = scoring.decay_factor(cfg.alpha, cfg.decay_mode, tick)
                for name in _LANES:
                    sketches[name].scale(f)
            for name, (kind, a, b) in lanes.items():
                sketches[name].update_many(kind, a[g0:g1], b[g0:g1])
    return {name: (s.entries, s.error_offset) for name, s in sketches.items()}


def _pass1_task(i: int):
    t0 = time.perf_counter()
    c0 = construction_count()
    payload = _pass1_payload(i)
    return (i, payload, construction_count() - c0,
            (time.perf_counter() - t0) * 1000.0, os.getpid())


# ---------------------------------------------------------------------------
# Pass 2: scoring against prefix + replay

def _prefix_rows_cms(i: int, lane: str, r: int, ix: np.ndarray,
                     prefix_grids: Optional[dict]) -> np.ndarray:
    """Per-row prefix counts at the batch's buckets.

    Merged mode gathers from the shipped prefix grid; per-partition
    mode left-folds gathers over the frozen summaries in ascending
    partition order.  The two produce bit-identical sums because the
    elementwise additions happen in the same order.
    """
    if prefix_grids is not None:
        return prefix_grids[lane][r, ix]
    acc = np.zeros(ix.shape[0])
    for j in range(i):
        acc = acc + _CTX["summaries"][j][lane][r, ix]
    return acc


def _score_cms_partition(i: int, prefix_grids: Optional[dict]) -> dict:
    cfg, span, u, v, tk = _partition_slice(i)
    n = span.num_events
    out = {name: np.zeros(n) for name in
           ("score", "edge_score", "src_score", "dst_score", "a_hat", "s_hat")}
    if n == 0:
        return out
    rows = cfg.rows
    lanes = _lane_inputs(cfg, u, v)
    idx = {
        name: bucket_indices(cfg.master_seed, rows, cfg.buckets, kind, a, b)
        for name, (kind, a, b) in lanes.items()
    }
    work_ce = {name: CountMinSketch(rows, cfg.buckets, cfg.master_seed) for name in lanes}
    if cfg.relational:
        work_cs = work_ce  # decayed live counts serve both estimates
    else:
        work_cs = {name: CountMinSketch(rows, cfg.buckets, cfg.master_seed) for name in lanes}

    lane_score = {}
    for g0, g1, tick in _tick_groups(tk):
        if cfg.relational:
            f = scoring.decay_factor(cfg.alpha, cfg.decay_mode, tick)
            for name in lanes:
                work_ce[name].counters *= f
        else:
            for name in lanes:
                work_ce[name].counters[:] = 0.0

        for name in lanes:
            a_rows = np.empty((rows, g1 - g0))
            s_rows = np.empty((rows, g1 - g0))
            for r in range(rows):
                ix = idx[name][r, g0:g1]
                run = _running_inclusive(ix)
                a_r = work_ce[name].counters[r, ix] + run
                pf = _prefix_rows_cms(i, name, r, ix, prefix_grids)
                if cfg.relational:
                    s_rows[r] = pf + a_r
                else:
                    s_rows[r] = pf + (work_cs[name].counters[r, ix] + run)
                a_rows[r] = a_r
            a_min = np.minimum.reduce(a_rows)
            s_min = np.minimum.reduce(s_rows)
            lane_score[name] = scoring.chi2_scores(a_min, s_min, float(tick))
            if name == "edge":
                out["a_hat"][g0:g1] = a_min
                out["s_hat"][g0:g1] = s_min
            for r in range(rows):
                np.add.at(work_ce[name].counters[r], idx[name][r, g0:g1], 1.0)
                if not cfg.relational:
                    np.add.at(work_cs[name].counters[r], idx[name][r, g0:g1], 1.0)

        out["edge_score"][g0:g1] = lane_score["edge"]
        if cfg.relational:
            out["src_score"][g0:g1] = lane_score["src"]
            out["dst_score"][g0:g1] = lane_score["dst"]
            out["score"][g0:g1] = np.maximum(
                lane_score["edge"], np.maximum(lane_score["src"], lane_score["dst"])
            )
        else:
            out["score"][g0:g1] = lane_score["edge"]
    out["s_lower"] = out["s_hat"].copy()  # Count-Min estimates are one-sided
    return out


def _score_fis_partition(i: int, prefix_state: Optional[dict]) -> dict:
    cfg, span, u, v, tk = _partition_slice(i)
    n = span.num_events
    out = {name: np.zeros(n) for name in
           ("score", "edge_score", "src_score", "dst_score", "a_hat", "s_hat", "s_lower")}
    if n == 0:
        return out
    lane_names = cfg.lane_names()
    work_ce = {name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor) for name in lane_names}
    work_cs = work_ce if cfg.relational else {
        name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor) for name in lane_names
    }
    if prefix_state is None:
        summaries = _CTX["summaries"]
        # Offsets add across individually queried prefix sketches.
        pre_off = {}
        for name in lane_names:
            total = 0.0
            for j in range(i):
                total += summaries[j][name][1]
            pre_off[name] = total

    def prefix_bounds(name: str, key: SketchKey) -> tuple[float, float]:
        if prefix_state is not None:
            entries, off = prefix_state[name]
            w = entries.get(key, 0.0)
            return w, w + off
        lo = 0.0
        for j in range(i):
            lo += summaries[j][name][0].get(key, 0.0)
        return lo, lo + pre_off[name]

    us = u.tolist()
    vs = v.tolist()
    for g0, g1, tick in _tick_groups(tk):
        if cfg.relational:
            f = scoring.decay_factor(cfg.alpha, cfg.decay_mode, tick)
            for name in lane_names:
                work_ce[name].scale(f)
        else:
            for name in lane_names:
                work_ce[name].clear()
        for e in range(g0, g1):
            keys = {"edge": SketchKey(KIND_EDGE, us[e], vs[e])}
            if cfg.relational:
                keys["src"] = SketchKey(KIND_NODE, us[e], 0)
                keys["dst"] = SketchKey(KIND_NODE, vs[e], 0)
            comp = {}
            for name, key in keys.items():
                work_ce[name].update(key)
                if work_cs is not work_ce:
                    work_cs[name].update(key)
                a_hat = work_ce[name].upper(key)
                pre_lo, pre_up = prefix_bounds(name, key)
                live_lo = work_cs[name].entries.get(key, 0.0)
                live_up = live_lo + work_cs[name].error_offset
                s_up = pre_up + live_up
                comp[name] = scoring.chi2_score(a_hat, s_up, tick)
                if name == "edge":
                    out["a_hat"][e] = a_hat
                    out["s_hat"][e] = s_up
                    out["s_lower"][e] = pre_lo + live_lo
            out["edge_score"][e] = comp["edge"]
            if cfg.relational:
                out["src_score"][e] = comp["src"]
                out["dst_score"][e] = comp["dst"]
                out["score"][e] = max(comp.values())
            else:
                out["score"][e] = comp["edge"]
    return out


def _pass2_task(args):
    i, prefix_payload = args
    t0 = time.perf_counter()
    c0 = construction_count()
    cfg = _CTX["cfg"]
    if cfg.variant == "cms":
        result = _score_cms_partition(i, prefix_payload)
    else:
        result = _score_fis_partition(i, prefix_payload)
    return (i, result, construction_count() - c0,
            (time.perf_counter() - t0) * 1000.0, os.getpid())


# ---------------------------------------------------------------------------
# Public single-partition operations (the run loop uses the same
# internals through worker tasks).

def pass1_build_ce(span: PartitionSpan, events, cfg: PipelineConfig) -> PartitionState:
    """Build and freeze one partition's summary sketches.

    ``events`` is the full sorted log; the span selects the partition's
    slice.  Raises if the slice holds ticks outside the span.
    """
    batch = _as_batch(events)
    dense, _ = _dense_ticks(batch)
    old = dict(_CTX)
    try:
        _set_ctx({"cfg": cfg, "spans": {span.partition_id: span}, "src": batch.src,
                  "dst": batch.dst, "dtick": dense, "summaries": None})
        payload = _pass1_payload(span.partition_id)
    finally:
        _set_ctx(old)
    return _wrap_summary(span, payload, cfg).freeze()


def _wrap_summary(span: PartitionSpan, payload: dict, cfg: PipelineConfig) -> PartitionState:
    if cfg.variant == "cms":
        lanes = {
            name: CountMinSketch.from_grid(cfg.rows, cfg.buckets, cfg.master_seed, payload[name])
            for name in _LANES
        }
    else:
        lanes = {
            name: FrequentItemsSketch.from_state(
                cfg.max_map_size, cfg.load_factor, payload[name][0], payload[name][1]
            )
            for name in _LANES
        }
    return PartitionState(span, lanes["edge"], lanes["src"], lanes["dst"])


class PrefixCS:
    """Query handle for the cumulative counts of partitions 0..i-1.

    In merged mode it wraps one folded sketch per lane; in
    per-partition mode it queries each frozen summary individually and
    combines per-row counts (Count-Min) or interval bounds
    (Frequent-Items).
    """

    def __init__(self, cfg: PipelineConfig, mode: str,
                 merged: Optional[dict] = None, states: Optional[list] = None):
        self._cfg = cfg
        self.mode = mode
        self._merged = merged
        self._states = states or []

    _ATTR = {"edge": "ce_edge", "src": "ce_src_node", "dst": "ce_dst_node"}

    def row_counts(self, lane: str, key: SketchKey) -> np.ndarray:
        """Count-Min only: summed per-row counts across the prefix."""
        if self._merged is not None:
            return self._merged[lane].row_counts(key)
        acc = np.zeros(self._cfg.rows)
        for st in self._states:
            acc = acc + getattr(st, self._ATTR[lane]).row_counts(key)
        return acc

    def bounds(self, lane: str, key: SketchKey) -> tuple[float, float]:
        """(lower, upper) cumulative bounds for a key."""
        if self._cfg.variant == "cms":
            est = float(self.row_counts(lane, key).min())
            return est, est
        if self._merged is not None:
            lo, up, _ = self._merged[lane].estimate(key)
            return lo, up
        lo = up = 0.0
        for st in self._states:
            l, u, _ = getattr(st, self._ATTR[lane]).estimate(key)
            lo += l
            up += u
        return lo, up

    def estimate(self, lane: str, key: SketchKey) -> float:
        return self.bounds(lane, key)[1]


def compute_prefix_cs(partitions: Sequence[PartitionState], i: int,
                      mode: str = "merged", cfg: Optional[PipelineConfig] = None) -> PrefixCS:
    """Cumulative-count handle over partitions 0..i-1 (all frozen)."""
    if cfg is None:
        raise ValueError("cfg is required")
    prefix = list(partitions[:i])
    for st in prefix:
        if not st.frozen:
            raise RuntimeError(f"partition {st.partition_id} not frozen before prefix read")
    if mode == "per_partition":
        return PrefixCS(cfg, mode, states=prefix)
    if mode != "merged":
        raise ValueError(f"unknown query mode {mode!r}")
    if cfg.variant == "cms":
        merged = {name: CountMinSketch(cfg.rows, cfg.buckets, cfg.master_seed) for name in _LANES}
    else:
        merged = {name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor) for name in _LANES}
    for st in prefix:  # ascending order, matching the incremental accumulator
        for name in _LANES:
            merged[name].merge_in(getattr(st, PrefixCS._ATTR[name]))
    return PrefixCS(cfg, mode, merged=merged)


def pass2_score(partitions: Sequence[PartitionState], i: int, events,
                cfg: PipelineConfig) -> ScoreBatch:
    """Score partition i's events against the prefix of earlier partitions."""
    for st in partitions[: i + 1]:
        if not st.frozen:
            raise RuntimeError(f"partition {st.partition_id} not frozen before pass 2")
    batch = _as_batch(events)
    dense, _ = _dense_ticks(batch)
    spans = [st.span for st in partitions]
    summaries = [_state_payload(st, cfg) for st in partitions]
    old = dict(_CTX)
    try:
        _set_ctx({"cfg": cfg, "spans": spans, "src": batch.src, "dst": batch.dst,
                  "dtick": dense, "summaries": summaries})
        prefix = _materialize_prefix(summaries, i, cfg) if cfg.query_mode == "merged" else None
        if cfg.variant == "cms":
            result = _score_cms_partition(i, prefix)
        else:
            result = _score_fis_partition(i, prefix)
    finally:
        _set_ctx(old)
    span = partitions[i].span
    return _result_to_batch(result, batch, dense, span)


def _state_payload(st: PartitionState, cfg: PipelineConfig) -> dict:
    if cfg.variant == "cms":
        return {"edge": st.ce_edge.counters, "src": st.ce_src_node.counters,
                "dst": st.ce_dst_node.counters}
    return {"edge": (st.ce_edge.entries, st.ce_edge.error_offset),
            "src": (st.ce_src_node.entries, st.ce_src_node.error_offset),
            "dst": (st.ce_dst_node.entries, st.ce_dst_node.error_offset)}


def _materialize_prefix(summaries: list, i: int, cfg: PipelineConfig) -> dict:
    """Fold summaries 0..i-1 (ascending) into one prefix payload."""
    if cfg.variant == "cms":
        prefix = {name: np.zeros((cfg.rows, cfg.buckets)) for name in _LANES}
        for j in range(i):
            for name in _LANES:
                prefix[name] += summaries[j][name]
        return prefix
    acc = {name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor) for name in _LANES}
    for j in range(i):
        for name in _LANES:
            other = FrequentItemsSketch.from_state(
                cfg.max_map_size, cfg.load_factor, summaries[j][name][0], summaries[j][name][1]
            )
            acc[name].merge_in(other)
    return {name: (acc[name].entries, acc[name].error_offset) for name in _LANES}


def _result_to_batch(result: dict, batch: EdgeBatch, dense: np.ndarray,
                     span: PartitionSpan) -> ScoreBatch:
    sl = slice(span.ev_lo, span.ev_hi)
    return ScoreBatch(
        seq=batch.seq[sl], src=batch.src[sl], dst=batch.dst[sl], tick=dense[sl],
        score=result["score"], edge_score=result["edge_score"],
        src_score=result["src_score"], dst_score=result["dst_score"],
        a_hat=result["a_hat"], s_hat=result["s_hat"],
        s_lower=result.get("s_lower", result["s_hat"]),
    )


# ---------------------------------------------------------------------------
# Orchestration

def _make_pool(workers: int):
    try:
        ctx = mp.get_context("fork")
        return cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx)
    except ValueError:
        ctx = mp.get_context("spawn")
        return cf.ProcessPoolExecutor(
            max_workers=workers, mp_context=ctx, initializer=_set_ctx, initargs=(_CTX,)
        )


def run_pipeline(events, cfg: PipelineConfig) -> PipelineResult:
    """Partition, build summaries in parallel, score in parallel.

    Returns scores in original sequence order plus run statistics.
    Output bytes depend only on (events, cfg minus num_workers).
    """
    stats = RunStats(num_partitions=cfg.num_partitions, num_workers=cfg.num_workers)
    t_start = time.perf_counter()
    c_start = construction_count()

    t0 = time.perf_counter()
    batch = _as_batch(events).time_sorted()
    dense, _ = _dense_ticks(batch)
    spans = _partition_spans(dense, int(dense[-1]) if len(batch) else 0, cfg.num_partitions)
    stats.wall_millis_by_phase["partition"] = (time.perf_counter() - t0) * 1000.0
    stats.timings.append(("partition", -1, 0, stats.wall_millis_by_phase["partition"]))

    _set_ctx({"cfg": cfg, "spans": spans, "src": batch.src, "dst": batch.dst,
              "dtick": dense, "summaries": None})
    k = cfg.num_partitions
    workers = min(cfg.num_workers, k)
    child_scratch = 0
    pids: dict[int, int] = {}

    def worker_id(pid: int) -> int:
        if pid == os.getpid():
            return 0
        return pids.setdefault(pid, len(pids) + 1)

    # Pass 1
    t0 = time.perf_counter()
    payloads: list = [None] * k
    if workers == 1:
        for i in range(k):
            i, payload, scratch, millis, pid = _pass1_task(i)
            payloads[i] = payload
            child_scratch += scratch
            stats.timings.append(("pass1", i, worker_id(pid), millis))
    else:
        with _make_pool(workers) as pool:
            for i, payload, scratch, millis, pid in pool.map(_pass1_task, range(k)):
                payloads[i] = payload
                child_scratch += scratch
                stats.timings.append(("pass1", i, worker_id(pid), millis))
    states = [_wrap_summary(spans[i], payloads[i], cfg).freeze() for i in range(k)]
    registry = [sk for st in states for sk in st.sketches()]
    summaries = [_state_payload(st, cfg) for st in states]
    _CTX["summaries"] = summaries
    stats.wall_millis_by_phase["pass1"] = (time.perf_counter() - t0) * 1000.0

    # Merged mode keeps one prefix accumulator triple, merged in
    # ascending partition order; each pass-2 task receives the prefix
    # state as of its partition.
    accumulator = None
    if cfg.query_mode == "merged":
        if cfg.variant == "cms":
            accumulator = {name: CountMinSketch(cfg.rows, cfg.buckets, cfg.master_seed)
                           for name in _LANES}
        else:
            accumulator = {name: FrequentItemsSketch(cfg.max_map_size, cfg.load_factor)
                           for name in _LANES}
        registry.extend(accumulator.values())

    # Pass 2
    t0 = time.perf_counter()
    results: list = [None] * k

    def acc_payload(copy: bool) -> Optional[dict]:
        if accumulator is None:
            return None
        if cfg.variant == "cms":
            return {name: (s.counters.copy() if copy else s.counters)
                    for name, s in accumulator.items()}
        return {name: (dict(s.entries), s.error_offset) for name, s in accumulator.items()}

    def merge_partition(i: int) -> None:
        if accumulator is None:
            return
        st = states[i]
        accumulator["edge"].merge_in(st.ce_edge)
        accumulator["src"].merge_in(st.ce_src_node)
        accumulator["dst"].merge_in(st.ce_dst_node)

    if workers == 1:
        for i in range(k):
            _, result, scratch, millis, pid = _pass2_task((i, acc_payload(copy=False)))
            results[i] = result
            child_scratch += scratch
            stats.timings.append(("pass2", i, worker_id(pid), millis))
            merge_partition(i)
    else:
        window = max(2 * workers, 2)
        with _make_pool(workers) as pool:
            pending: dict = {}
            submitted = 0
            while submitted < k or pending:
                while submitted < k and len(pending) < window:
                    fut = pool.submit(_pass2_task, (submitted, acc_payload(copy=True)))
                    pending[fut] = submitted
                    merge_partition(submitted)
                    submitted += 1
                done, _ = cf.wait(pending, return_when=cf.FIRST_COMPLETED)
                for fut in done:
                    i = pending.pop(fut)
                    _, result, scratch, millis, pid = fut.result()
                    results[i] = result
                    child_scratch += scratch
                    stats.timings.append(("pass2", i, worker_id(pid), millis))
    stats.wall_millis_by_phase["pass2"] = (time.perf_counter() - t0) * 1000.0

    parts = [_result_to_batch(results[i], batch, dense, spans[i]) for i in range(k)]
    scores = ScoreBatch.concatenate(parts)

    stats.persistent_sketch_count = len(registry)
    stats.persistent_sketch_bytes = sum(sk.nbytes for sk in registry)
    parent_delta = construction_count() - c_start
    stats.scratch_sketch_count = parent_delta - len(registry) + child_scratch
    stats.wall_millis_by_phase["total"] = (time.perf_counter() - t_start) * 1000.0
    return PipelineResult(scores=scores, stats=stats)


# ---------------------------------------------------------------------------
# File interfaces

_SCORE_COLUMNS = ("seq", "src", "dst", "tick", "score", "edge_score", "src_score", "dst_score")


def write_scores_csv(scores: ScoreBatch, path) -> None:
    """Score CSV: seq,src,dst,tick,score,edge_score,src_score,dst_score.

    Scores print as shortest round-trip decimals.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SCORE_COLUMNS)
        cols = (scores.seq.tolist(), scores.src.tolist(), scores.dst.tolist(),
                scores.tick.tolist(), scores.score.tolist(), scores.edge_score.tolist(),
                scores.src_score.tolist(), scores.dst_score.tolist())
        for seq, src, dst, tick, sc, esc, ssc, dsc in zip(*cols):
            w.writerow((seq, src, dst, tick, repr(sc), repr(esc), repr(ssc), repr(dsc)))


def write_timings_csv(stats: RunStats, path) -> None:
    """Timing CSV: phase,partition,worker,millis."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("phase", "partition", "worker", "millis"))
        for phase, partition, worker, millis in stats.timings:
            w.writerow((phase, partition, worker, f"{millis:.3f}"))
