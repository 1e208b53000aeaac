"""Mergeable constant-memory frequency sketches.

Two sketch families back the scoring engine, both answering the same
question -- "roughly how many times has this key been seen?" -- under a
shared update/estimate/merge/scale contract:

``CountMinSketch``
    A grid of ``rows x buckets`` counters, one seeded hash per row.
    Estimates never undercount (one-sided error); the overcount for a
    key is at most ``(e / buckets) * total_mass`` per row with
    probability ``1 - 1/e``, so the minimum over rows is rarely
    inflated by much.

``FrequentItemsSketch``
    A bounded hash map (capacity a power of two).  When occupancy
    reaches ``load_factor * max_map_size`` a purge subtracts a sampled
    median weight from every entry and evicts the non-positive ones.
    The cumulative subtracted weight is tracked in ``error_offset``,
    giving a deterministic two-sided bound:
    ``stored <= true <= stored + error_offset``.

Counters are float64 rather than integers because the relational
scoring variant decays sketch contents by a fractional factor at tick
boundaries.  Hashing is a seeded 64-bit mixing function; two sketches
built with the same (rows, buckets, master_seed) hash identically,
which is what makes merging well-defined.  Merging sketches with
different shapes or seeds is an error, never a silent re-hash.

Keys are (kind, a, b) triples: directed edges carry both endpoints,
node keys put the node id in ``a`` and zero in ``b``.  Edge keys are
directed -- (u, v) and (v, u) hash independently.
"""

from __future__ import annotations

import statistics
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "KIND_EDGE",
    "KIND_NODE",
    "SketchKey",
    "edge_key",
    "node_key",
    "CountMinSketch",
    "FrequentItemsSketch",
    "lane_seed",
    "bucket_indices",
    "construction_count",
]

KIND_EDGE = 0
KIND_NODE = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
# Distinct salts keep edge and node keys in disjoint hash streams even
# when their (a, b) payloads coincide.
_KIND_SALT = (0x243F6A8885A308D3, 0x13198A2E03707344)

# Number of sketch objects ever constructed in this process.  The
# pipeline reads this to verify its constant-memory accounting.
_CONSTRUCTIONS = 0


def construction_count() -> int:
    """Total sketch constructions in this process (both families)."""
    return _CONSTRUCTIONS


def _count_construction() -> None:
    global _CONSTRUCTIONS
    _CONSTRUCTIONS += 1


def _mix64(z: int) -> int:
    """SplitMix64 finalizer over Python ints (mod 2^64)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _mix64_arr(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over uint64 arrays; bit-identical to _mix64."""
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def lane_seed(master_seed: int, row: int, kind: int) -> int:
    """Per-(row, kind) hash seed; rows use master_seed + row_index."""
    return _mix64(_mix64((master_seed + row) & _MASK64) ^ _KIND_SALT[kind])


def _bucket(seed: int, a: int, b: int, buckets: int) -> int:
    h = _mix64(seed ^ (int(a) & _MASK64))
    h = _mix64(h ^ (int(b) & _MASK64))
    return h % buckets


def bucket_indices(
    master_seed: int,
    rows: int,
    buckets: int,
    kind: int,
    a: np.ndarray,
    b: np.ndarray,
) -> np.ndarray:
    """Vectorized per-row bucket indices for a batch of same-kind keys.

    Returns an int64 array of shape (rows, len(a)).  Bit-identical to
    looping ``_bucket`` over the scalar path.
    """
    a64 = np.asarray(a).astype(np.uint64)
    b64 = np.asarray(b).astype(np.uint64)
    out = np.empty((rows, a64.shape[0]), dtype=np.int64)
    for r in range(rows):
        h = _mix64_arr(np.uint64(lane_seed(master_seed, r, kind)) ^ a64)
        h = _mix64_arr(h ^ b64)
        out[r] = (h % np.uint64(buckets)).astype(np.int64)
    return out


class SketchKey(NamedTuple):
    """A sketchable key: a directed edge or a single node."""

    kind: int
    a: int
    b: int


def edge_key(u: int, v: int) -> SketchKey:
    """Directed edge key; (u, v) and (v, u) are distinct keys."""
    return SketchKey(KIND_EDGE, int(u), int(v))


def node_key(u: int) -> SketchKey:
    return SketchKey(KIND_NODE, int(u), 0)


class CountMinSketch:
    """Count-Min sketch with real-valued counters and seeded row hashes.

    Parameters:
        rows: number of hash functions (grid rows), >= 1.
        buckets: counters per row, >= 1.
        master_seed: seeds every row hash deterministically; sketches
            sharing (rows, buckets, master_seed) are merge-compatible.
    """

    __slots__ = ("rows", "buckets", "master_seed", "counters", "_seeds")

    def __init__(self, rows: int, buckets: int, master_seed: int = 0):
        if rows < 1:
            raise ValueError(f"rows must be >= 1, got {rows}")
        if buckets < 1:
            raise ValueError(f"buckets must be >= 1, got {buckets}")
        self.rows = int(rows)
        self.buckets = int(buckets)
        self.master_seed = int(master_seed) & _MASK64
        self.counters = np.zeros((self.rows, self.buckets), dtype=np.float64)
        self._seeds = tuple(
            tuple(lane_seed(self.master_seed, r, kind) for r in range(self.rows))
            for kind in (KIND_EDGE, KIND_NODE)
        )
        _count_construction()

    @classmethod
    def from_grid(
        cls, rows: int, buckets: int, master_seed: int, grid: np.ndarray
    ) -> "CountMinSketch":
        """Wrap an externally built counter grid (shape must match)."""
        s = cls(rows, buckets, master_seed)
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape != s.counters.shape:
            raise ValueError(f"grid shape {grid.shape} != {s.counters.shape}")
        s.counters = grid
        return s

    def _indices(self, key: SketchKey) -> list[int]:
        seeds = self._seeds[key.kind]
        return [_bucket(seeds[r], key.a, key.b, self.buckets) for r in range(self.rows)]

    def update(self, key: SketchKey, delta: float = 1.0) -> None:
        """Add non-negative weight to a key (decay is scale(), not negative updates)."""
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        for r, idx in enumerate(self._indices(key)):
            self.counters[r, idx] += delta

    def estimate(self, key: SketchKey) -> float:
        """Point estimate: minimum counter over rows; never undercounts."""
        return float(min(self.counters[r, idx] for r, idx in enumerate(self._indices(key))))

    def row_counts(self, key: SketchKey) -> np.ndarray:
        """Per-row counter values for a key (before the min is taken)."""
        return np.array(
            [self.counters[r, idx] for r, idx in enumerate(self._indices(key))]
        )

    def update_many(self, kind: int, a, b, deltas) -> None:
        """Vectorized update for a batch of same-kind keys."""
        idx = bucket_indices(self.master_seed, self.rows, self.buckets, kind, a, b)
        d = np.asarray(deltas, dtype=np.float64)
        if d.ndim == 0:
            d = np.broadcast_to(d, idx.shape[1:])
        if np.any(d < 0):
            raise ValueError("deltas must be >= 0")
        for r in range(self.rows):
            np.add.at(self.counters[r], idx[r], d)

    def estimate_many(self, kind: int, a, b) -> np.ndarray:
        """Vectorized estimates for a batch of same-kind keys."""
        idx = bucket_indices(self.master_seed, self.rows, self.buckets, kind, a, b)
        return np.minimum.reduce([self.counters[r, idx[r]] for r in range(self.rows)])

    def merge(self, other: "CountMinSketch") -> "CountMinSketch":
        """Pointwise counter sum into a new sketch; exact for Count-Min."""
        self._check_compatible(other)
        return CountMinSketch.from_grid(
            self.rows, self.buckets, self.master_seed, self.counters + other.counters
        )

    def merge_in(self, other: "CountMinSketch") -> None:
        """In-place pointwise counter sum (used by the prefix accumulator)."""
        self._check_compatible(other)
        self.counters += other.counters

    def scale(self, factor: float) -> None:
        """Multiply every counter by a decay factor in [0, 1]."""
        if not 0.0 <= factor <= 1.0:
            raise ValueError(f"scale factor must be in [0, 1], got {factor}")
        self.counters *= factor

    def clear(self) -> None:
        self.counters[:] = 0.0

    def total_mass(self) -> float:
        """Sum of one row's counters; equals total inserted weight."""
        return float(self.counters[0].sum())

    @property
    def nbytes(self) -> int:
        return self.counters.nbytes

    def _check_compatible(self, other: "CountMinSketch") -> None:
        if (self.rows, self.buckets, self.master_seed) != (
            other.rows,
            other.buckets,
            other.master_seed,
        ):
            raise ValueError(
                "cannot merge sketches with different shape or seed: "
                f"({self.rows}x{self.buckets}, seed {self.master_seed}) vs "
                f"({other.rows}x{other.buckets}, seed {other.master_seed})"
            )


# At most this many stored weights are sampled to pick a purge median.
_PURGE_SAMPLE = 64


class FrequentItemsSketch:
    """Bounded-map frequency sketch with a median-subtracting purge.

    Parameters:
        max_map_size: map capacity, a power of two >= 2.  Occupancy
            stays strictly below this at all times.
        load_factor: fraction of capacity that triggers a purge.

    The purge samples at most 64 stored weights (deterministic stride
    over insertion order -- no RNG, so runs are reproducible), subtracts
    their median from every entry, drops entries that fall to zero or
    below, and adds the median to ``error_offset``.  For every key,
    ``stored <= true_count <= stored + error_offset``.
    """

    __slots__ = ("max_map_size", "load_factor", "error_offset", "_entries", "_purge_at")

    def __init__(self, max_map_size: int, load_factor: float = 0.75):
        m = int(max_map_size)
        if m < 2 or m & (m - 1):
            raise ValueError(f"max_map_size must be a power of two >= 2, got {max_map_size}")
        if not 0.0 < load_factor < 1.0:
            raise ValueError(f"load_factor must be in (0, 1), got {load_factor}")
        self.max_map_size = m
        self.load_factor = float(load_factor)
        self.error_offset = 0.0
        self._entries: dict[SketchKey, float] = {}
        self._purge_at = self.load_factor * m
        _count_construction()

    @classmethod
    def from_state(
        cls,
        max_map_size: int,
        load_factor: float,
        entries: dict[SketchKey, float],
        error_offset: float,
    ) -> "FrequentItemsSketch":
        s = cls(max_map_size, load_factor)
        s._entries = dict(entries)
        s.error_offset = float(error_offset)
        return s

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> dict[SketchKey, float]:
        """Stored key weights (insertion-ordered); treat as read-only."""
        return self._entries

    def update(self, key: SketchKey, delta: float = 1.0) -> None:
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        cur = self._entries.get(key)
        if cur is not None:
            self._entries[key] = cur + delta
        elif delta > 0.0:
            # Zero-weight entries are never stored: they carry no
            # information and would stall the purge loop.
            self._entries[key] = float(delta)
            if len(self._entries) >= self._purge_at:
                self._purge()

    def update_many(self, kind: int, a, b, delta: float = 1.0) -> None:
        """Batch update for same-kind keys; equivalent to looped update()."""
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        if delta == 0.0:
            return
        entries = self._entries
        purge_at = self._purge_at
        d = float(delta)
        for ai, bi in zip(np.asarray(a).tolist(), np.asarray(b).tolist()):
            key = SketchKey(kind, ai, bi)
            cur = entries.get(key)
            if cur is not None:
                entries[key] = cur + d
            else:
                entries[key] = d
                if len(entries) >= purge_at:
                    self._purge()
                    entries = self._entries

    def estimate(self, key: SketchKey) -> tuple[float, float, float]:
        """(lower, upper, point) bounds; point is the upper bound.

        The upper bound is used for scoring so both sketch families
        keep one-sided overestimate semantics.
        """
        stored = self._entries.get(key, 0.0)
        upper = stored + self.error_offset
        return (stored, upper, upper)

    def upper(self, key: SketchKey) -> float:
        return self._entries.get(key, 0.0) + self.error_offset

    def merge(self, other: "FrequentItemsSketch") -> "FrequentItemsSketch":
        """Keywise weight sum; error offsets add; purges if over threshold."""
        self._check_compatible(other)
        merged = FrequentItemsSketch(self.max_map_size, self.load_factor)
        merged._entries = dict(self._entries)
        merged.error_offset = self.error_offset
        merged.merge_in(other)
        return merged

    def merge_in(self, other: "FrequentItemsSketch") -> None:
        self._check_compatible(other)
        entries = self._entries
        for key, w in other._entries.items():
            cur = entries.get(key)
            entries[key] = w if cur is None else cur + w
        self.error_offset += other.error_offset
        if len(entries) >= self._purge_at:
            self._purge()

    def scale(self, factor: float) -> None:
        """Multiply all weights and the error offset by factor in [0, 1]."""
        if not 0.0 <= factor <= 1.0:
            raise ValueError(f"scale factor must be in [0, 1], got {factor}")
        self._entries = {k: w * factor for k, w in self._entries.items() if w * factor > 0.0}
        self.error_offset *= factor

    def clear(self) -> None:
        self._entries = {}
        self.error_offset = 0.0

    def _purge(self) -> None:
        while len(self._entries) >= self._purge_at:
            weights = list(self._entries.values())
            stride = max(1, len(weights) // _PURGE_SAMPLE)
            sample = weights[::stride][:_PURGE_SAMPLE]
            med = float(statistics.median(sample))
            self._entries = {
                k: w - med for k, w in self._entries.items() if w - med > 0.0
            }
            self.error_offset += med

    @property
    def nbytes(self) -> int:
        # Capacity bound, not live occupancy: key triple + weight + slack.
        return self.max_map_size * 48

    def _check_compatible(self, other: "FrequentItemsSketch") -> None:
        if (self.max_map_size, self.load_factor) != (other.max_map_size, other.load_factor):
            raise ValueError(
                "cannot merge sketches with different configuration: "
                f"(M={self.max_map_size}, lf={self.load_factor}) vs "
                f"(M={other.max_map_size}, lf={other.load_factor})"
            )
