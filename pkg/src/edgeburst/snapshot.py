"""Binary snapshot format for sketches (debugging / persistence).

Layout, all little-endian:

    magic   4 bytes  b"MDSK"
    version u16      currently 1
    kind    u8       0 = Count-Min, 1 = Frequent-Items
    rows    u32      hash rows (0 for Frequent-Items)
    size    u32      buckets (Count-Min) or max_map_size (Frequent-Items)
    seed    u64      master seed (0 for Frequent-Items)

followed by the payload: the f64 counter grid row-major for Count-Min,
or, for Frequent-Items, one 24-byte record per stored entry (16-byte
key, f64 weight) and a trailing f64 error offset.

Keys pack into 16 bytes as two u64 words: the key kind occupies the
top bit of the first word, so node ids must fit in 63 bits.  The
format does not carry the Frequent-Items load factor; ``load`` takes
it as a parameter (default 0.75).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .sketch import CountMinSketch, FrequentItemsSketch, SketchKey

__all__ = ["save", "load", "MAGIC", "VERSION"]

MAGIC = b"MDSK"
VERSION = 1

_HEADER = struct.Struct("<4sHBIIQ")
_ENTRY = struct.Struct("<QQd")
_F64 = struct.Struct("<d")

_KIND_CMS = 0
_KIND_FIS = 1
_ID_LIMIT = 1 << 63

Sketch = Union[CountMinSketch, FrequentItemsSketch]


def _pack_key(key: SketchKey) -> tuple[int, int]:
    if not (0 <= key.a < _ID_LIMIT and 0 <= key.b < _ID_LIMIT):
        raise ValueError(f"key ids must fit in 63 bits for snapshots: {key}")
    return (key.kind << 63) | key.a, key.b

def _unpack_key(w0: int, w1: int) -> SketchKey:
    return SketchKey(w0 >> 63, w0 & (_ID_LIMIT - 1), w1)


def save(sketch: Sketch, path: Union[str, Path]) -> None:
    """Write a sketch snapshot to path."""
    with open(path, "wb") as fh:
        if isinstance(sketch, CountMinSketch):
            fh.write(
                _HEADER.pack(
                    MAGIC, VERSION, _KIND_CMS, sketch.rows, sketch.buckets, sketch.master_seed
                )
            )
            fh.write(np.ascontiguousarray(sketch.counters, dtype="<f8").tobytes())
        elif isinstance(sketch, FrequentItemsSketch):
            fh.write(_HEADER.pack(MAGIC, VERSION, _KIND_FIS, 0, sketch.max_map_size, 0))
            for key, weight in sketch.entries.items():
                w0, w1 = _pack_key(key)
                fh.write(_ENTRY.pack(w0, w1, weight))
            fh.write(_F64.pack(sketch.error_offset))
        else:
            raise TypeError(f"not a sketch: {type(sketch).__name__}")


def load(path: Union[str, Path], load_factor: float = 0.75) -> Sketch:
    """Read a sketch snapshot; load_factor applies to Frequent-Items only."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"snapshot too short: {path}")
    magic, version, kind, rows, size, seed = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r} in {path}")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version} in {path}")
    body = blob[_HEADER.size :]

    if kind == _KIND_CMS:
        expected = rows * size * 8
        if len(body) != expected:
            raise ValueError(f"counter payload is {len(body)} bytes, expected {expected}")
        grid = np.frombuffer(body, dtype="<f8").reshape(rows, size).copy()
        return CountMinSketch.from_grid(rows, size, seed, grid)

    if kind == _KIND_FIS:
        if len(body) < _F64.size or (len(body) - _F64.size) % _ENTRY.size:
            raise ValueError("malformed frequent-items payload")
        entries: dict[SketchKey, float] = {}
        n = (len(body) - _F64.size) // _ENTRY.size
        for i in range(n):
            w0, w1, weight = _ENTRY.unpack_from(body, i * _ENTRY.size)
            entries[_unpack_key(w0, w1)] = weight
        (offset,) = _F64.unpack_from(body, n * _ENTRY.size)
        return FrequentItemsSketch.from_state(size, load_factor, entries, offset)

    raise ValueError(f"unknown sketch kind {kind} in {path}")
