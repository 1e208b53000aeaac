"""Edge-log ingestion and labeled synthetic stream generation.

Input logs are header-less CSV lines of ``src,dst,timestamp``; an
optional companion label file carries one 0/1 per line, aligned by
line number.  Node tokens are interned to dense integer ids in first
appearance order (source before destination within a record), and raw
timestamps are dense-ranked to 1-based ticks; both mappings ride along
on the stream for auditability and exact round-trips.

The synthetic generator lays uniform background traffic over a node
universe and injects labeled micro-cluster bursts: one source hitting
a block of fresh destinations with repeated edges at a single tick.
Randomness comes from a counter-based generator keyed by (seed, tick),
so any tick's slice can be regenerated independently and the full
stream is reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .pipeline import EdgeBatch

__all__ = [
    "LabeledStream",
    "BurstSpec",
    "SyntheticSpec",
    "parse_edge_csv",
    "generate_synthetic",
    "load_synthetic_spec",
    "write_edge_csv",
    "write_labels_file",
    "write_node_map_csv",
]


@dataclass
class LabeledStream:
    """A time-sorted edge log with per-event anomaly labels.

    ``events.tick`` holds dense 1-based tick ranks; ``tick_values[t-1]``
    recovers the raw timestamp for dense tick ``t``.  ``node_names``
    maps interned ids back to the original tokens (None when events
    were built directly from integer ids).  ``seq`` is the position in
    the time-sorted stream; ties within a tick keep input order.
    """

    events: EdgeBatch
    labels: np.ndarray
    node_names: Optional[list[str]] = None
    tick_values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if len(self.labels) != len(self.events):
            raise ValueError(
                f"label count {len(self.labels)} != event count {len(self.events)}"
            )

    def __len__(self) -> int:
        return len(self.events)

    @property
    def num_anomalies(self) -> int:
        return int(self.labels.sum())

    def prefix(self, n: int) -> "LabeledStream":
        """First n events of the time-sorted stream."""
        ev = self.events
        return LabeledStream(
            EdgeBatch(ev.src[:n], ev.dst[:n], ev.tick[:n], ev.seq[:n]),
            self.labels[:n],
            node_names=self.node_names,
            tick_values=self.tick_values,
        )

    def raw_tick(self, dense_tick: int) -> int:
        if self.tick_values is None:
            return dense_tick
        return int(self.tick_values[dense_tick - 1])


def _finalize(src, dst, raw_ts, labels, node_names) -> LabeledStream:
    """Sort by (timestamp, input order), dense-rank ticks, renumber seq."""
    raw_ts = np.asarray(raw_ts, dtype=np.int64)
    order = np.argsort(raw_ts, kind="stable")
    src = np.asarray(src, dtype=np.int64)[order]
    dst = np.asarray(dst, dtype=np.int64)[order]
    raw_sorted = raw_ts[order]
    labels = np.asarray(labels, dtype=np.uint8)[order]
    tick_values = np.unique(raw_sorted)
    dense = (np.searchsorted(tick_values, raw_sorted) + 1).astype(np.int64)
    batch = EdgeBatch(src, dst, dense)
    return LabeledStream(batch, labels, node_names=node_names, tick_values=tick_values)


def parse_edge_csv(
    path: Union[str, Path], label_path: Union[str, Path, None] = None
) -> LabeledStream:
    """Parse a src,dst,timestamp CSV (no header) into a LabeledStream.

    Malformed lines raise ValueError with the 1-based line number.
    Without a label file every event is labeled 0; with one, the label
    count must match the line count exactly.
    """
    try:
        df = pd.read_csv(
            path, header=None, dtype=str, skip_blank_lines=False, keep_default_na=False
        )
    except pd.errors.EmptyDataError:
        return _finalize([], [], [], [], None)
    except pd.errors.ParserError as exc:
        raise ValueError(f"{path}: malformed CSV: {exc}") from None
    if df.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns (src,dst,timestamp), got {df.shape[1]}")
    for col in range(3):
        empty = df[col].astype(str).str.strip() == ""
        if empty.any():
            raise ValueError(f"{path}: malformed line {int(np.flatnonzero(empty)[0]) + 1}: empty field")
    ts = pd.to_numeric(df[2], errors="coerce")
    bad = ts.isna()
    if bad.any():
        raise ValueError(
            f"{path}: malformed line {int(np.flatnonzero(bad)[0]) + 1}: "
            f"non-numeric timestamp {df[2].iloc[int(np.flatnonzero(bad)[0])]!r}"
        )
    ts = ts.astype(np.int64)
    if (ts < 0).any():
        line = int(np.flatnonzero((ts < 0).to_numpy())[0]) + 1
        raise ValueError(f"{path}: malformed line {line}: negative timestamp")

    # Intern node tokens in first-appearance order, source before
    # destination within each record.
    n = len(df)
    tokens = np.empty(2 * n, dtype=object)
    tokens[0::2] = df[0].to_numpy(dtype=object)
    tokens[1::2] = df[1].to_numpy(dtype=object)
    codes, uniques = pd.factorize(tokens)
    node_names = [str(u) for u in uniques]

    labels = np.zeros(n, dtype=np.uint8)
    if label_path is not None:
        raw = Path(label_path).read_text().split()
        if len(raw) != n:
            raise ValueError(
                f"{label_path}: {len(raw)} labels for {n} events (counts must match)"
            )
        labels = np.array([int(x) for x in raw], dtype=np.uint8)
        if labels.size and labels.max() > 1:
            raise ValueError(f"{label_path}: labels must be 0 or 1")
    return _finalize(codes[0::2], codes[1::2], ts.to_numpy(), labels, node_names)


@dataclass(frozen=True)
class BurstSpec:
    """One injected micro-cluster: src hits num_targets fresh nodes,
    weight edges each, all at one tick."""

    tick: int
    src: int
    num_targets: int
    weight: int

    @property
    def num_events(self) -> int:
        return self.num_targets * self.weight


@dataclass
class SyntheticSpec:
    """Recipe for a labeled synthetic stream."""

    num_nodes: int = 100
    num_ticks: int = 100
    base_rate: float = 100.0
    bursts: list = field(default_factory=list)
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 1 or self.num_ticks < 1:
            raise ValueError("num_nodes and num_ticks must be >= 1")
        if self.base_rate < 0:
            raise ValueError("base_rate must be >= 0")
        for b in self.bursts:
            if not 1 <= b.tick <= self.num_ticks:
                raise ValueError(f"burst tick {b.tick} outside [1, {self.num_ticks}]")
            if b.num_targets < 1 or b.weight < 1:
                raise ValueError("burst targets and weight must be >= 1")


def generate_synthetic(spec: SyntheticSpec) -> LabeledStream:
    """Deterministic labeled stream: uniform background plus bursts.

    Background edges at tick t are drawn with a Philox generator keyed
    by (rng_seed, t): a Poisson(base_rate) count of uniformly random
    node pairs, labeled 0.  Burst events are labeled 1 and target fresh
    node ids above the background universe.
    """
    # Fresh destination blocks are allocated in burst listing order.
    fresh_base = {}
    next_fresh = spec.num_nodes
    for idx, b in enumerate(spec.bursts):
        fresh_base[idx] = next_fresh
        next_fresh += b.num_targets

    srcs, dsts, ticks, labels = [], [], [], []
    bursts_by_tick: dict[int, list[int]] = {}
    for idx, b in enumerate(spec.bursts):
        bursts_by_tick.setdefault(b.tick, []).append(idx)

    for tick in range(1, spec.num_ticks + 1):
        rng = np.random.Generator(np.random.Philox(key=[spec.rng_seed, tick]))
        n_bg = int(rng.poisson(spec.base_rate)) if spec.base_rate > 0 else 0
        if n_bg:
            srcs.append(rng.integers(0, spec.num_nodes, n_bg, dtype=np.int64))
            dsts.append(rng.integers(0, spec.num_nodes, n_bg, dtype=np.int64))
            ticks.append(np.full(n_bg, tick, dtype=np.int64))
            labels.append(np.zeros(n_bg, dtype=np.uint8))
        for idx in bursts_by_tick.get(tick, ()):
            b = spec.bursts[idx]
            targets = fresh_base[idx] + np.arange(b.num_targets, dtype=np.int64)
            dst = np.repeat(targets, b.weight)
            srcs.append(np.full(dst.shape[0], b.src, dtype=np.int64))
            dsts.append(dst)
            ticks.append(np.full(dst.shape[0], tick, dtype=np.int64))
            labels.append(np.ones(dst.shape[0], dtype=np.uint8))

    if not srcs:
        return _finalize([], [], [], [], None)
    return _finalize(
        np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ticks),
        np.concatenate(labels), None,
    )


def load_synthetic_spec(path: Union[str, Path]) -> SyntheticSpec:
    """Parse a flat key=value spec file with repeated burst= lines.

    Example::

        num_nodes=200
        num_ticks=128
        base_rate=500
        seed=7
        burst=tick=10,src=1,targets=50,weight=4
    """
    fields: dict[str, str] = {}
    bursts: list[BurstSpec] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key == "burst":
            kv = {}
            for part in value.split(","):
                if "=" not in part:
                    raise ValueError(f"{path}: line {lineno}: bad burst field {part!r}")
                k, _, v = part.partition("=")
                kv[k.strip()] = int(v)
            try:
                bursts.append(
                    BurstSpec(tick=kv.pop("tick"), src=kv.pop("src"),
                              num_targets=kv.pop("targets"), weight=kv.pop("weight"))
                )
            except KeyError as exc:
                raise ValueError(f"{path}: line {lineno}: burst missing field {exc}") from None
            if kv:
                raise ValueError(f"{path}: line {lineno}: unknown burst fields {sorted(kv)}")
        else:
            fields[key] = value.strip()
    known = {"num_nodes", "num_ticks", "base_rate", "seed"}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return SyntheticSpec(
        num_nodes=int(fields.get("num_nodes", 100)),
        num_ticks=int(fields.get("num_ticks", 100)),
        base_rate=float(fields.get("base_rate", 100)),
        bursts=bursts,
        rng_seed=int(fields.get("seed", 0)),
    )


def write_edge_csv(stream: LabeledStream, path: Union[str, Path]) -> None:
    """Write src,dst,timestamp lines; exact round-trip with parse_edge_csv."""
    ev = stream.events
    names = stream.node_names
    with open(path, "w") as fh:
        for s, d, t in zip(ev.src.tolist(), ev.dst.tolist(), ev.tick.tolist()):
            raw = stream.raw_tick(t)
            if names is not None:
                fh.write(f"{names[s]},{names[d]},{raw}\n")
            else:
                fh.write(f"{s},{d},{raw}\n")


def write_labels_file(labels, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(str(int(x)) for x in np.asarray(labels).tolist()))
        if len(labels):
            fh.write("\n")


def write_node_map_csv(stream: LabeledStream, path: Union[str, Path]) -> None:
    """Interned id -> original token mapping, for score auditability."""
    with open(path, "w") as fh:
        fh.write("node_id,token\n")
        if stream.node_names is not None:
            for i, name in enumerate(stream.node_names):
                fh.write(f"{i},{name}\n")
