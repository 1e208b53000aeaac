"""Shared oracles and stream builders for the test suite.

The reference implementations here are deliberately independent of the
pipeline's vectorized internals: exact counts come from plain
dictionaries, and the sequential reference scores events one at a time
with scalar sketch calls.
"""

from collections import Counter, defaultdict

import numpy as np
from hypothesis import settings

from edgeburst.pipeline import EdgeBatch, _dense_ticks
from edgeburst.scoring import chi2_score, decay_factor
from edgeburst.sketch import CountMinSketch, SketchKey, edge_key, node_key

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def exact_counts(keys, weights=None) -> Counter:
    """Ground-truth frequency table for a stream of hashable keys."""
    c = Counter()
    if weights is None:
        c.update(keys)
        return c
    for k, w in zip(keys, weights):
        c[k] += w
    return c


def reference_plain(batch: EdgeBatch, cfg):
    """Single-threaded plain-variant reference: one current-tick sketch
    cleared at boundaries, one cumulative sketch, update then query per
    event.  Returns (scores, a_hat, s_hat, tick) arrays."""
    dense, _ = _dense_ticks(batch)
    ce = CountMinSketch(cfg.rows, cfg.buckets, cfg.master_seed)
    cs = CountMinSketch(cfg.rows, cfg.buckets, cfg.master_seed)
    cur = None
    scores, a_out, s_out = [], [], []
    for u, v, t in zip(batch.src.tolist(), batch.dst.tolist(), dense.tolist()):
        if t != cur:
            ce.clear()
            cur = t
        k = edge_key(u, v)
        ce.update(k)
        cs.update(k)
        a = ce.estimate(k)
        s = cs.estimate(k)
        a_out.append(a)
        s_out.append(s)
        scores.append(chi2_score(a, s, t))
    return (np.array(scores), np.array(a_out), np.array(s_out), dense)


def reference_relational(batch: EdgeBatch, cfg):
    """Single-threaded relational reference with K=1 semantics: three
    decayed live sketches plus raw-rowcount cumulative reads combined
    before the min.  Mirrors the engine's contract, used for K=1
    cross-checks of the vectorized path."""
    dense, _ = _dense_ticks(batch)
    live = {n: CountMinSketch(cfg.rows, cfg.buckets, cfg.master_seed) for n in ("e", "s", "d")}
    cur = None
    out = []
    for u, v, t in zip(batch.src.tolist(), batch.dst.tolist(), dense.tolist()):
        if t != cur:
            if cur is not None:
                f = decay_factor(cfg.alpha, cfg.decay_mode, t)
                for sk in live.values():
                    sk.scale(f)
            cur = t
        keys = {"e": edge_key(u, v), "s": node_key(u), "d": node_key(v)}
        comp = []
        for lane, key in keys.items():
            live[lane].update(key)
            rows = live[lane].row_counts(key)
            a = float(rows.min())
            s = float(rows.min())  # prefix is empty at K=1; s rows == live rows
            comp.append(chi2_score(a, s, t))
        out.append(max(comp))
    return np.array(out)


def exact_cumulative_plain(batch: EdgeBatch) -> np.ndarray:
    """True raw cumulative count of each event's edge key, through and
    including the event itself (the quantity plain-mode s_hat bounds)."""
    seen: Counter = Counter()
    out = np.empty(len(batch))
    for i, (u, v) in enumerate(zip(batch.src.tolist(), batch.dst.tolist())):
        seen[(u, v)] += 1
        out[i] = seen[(u, v)]
    return out


def exact_cumulative_relational(batch: EdgeBatch, spans, alpha: float) -> np.ndarray:
    """True decay-weighted cumulative edge count under the engine's
    schedule: within each partition weights decay at tick boundaries;
    finished partitions contribute their frozen decayed totals."""
    dense, _ = _dense_ticks(batch)
    out = np.empty(len(batch))
    frozen: Counter = Counter()
    for span in spans:
        live: defaultdict = defaultdict(float)
        cur = None
        for i in range(span.ev_lo, span.ev_hi):
            t = int(dense[i])
            if t != cur:
                if cur is not None:
                    for k in live:
                        live[k] *= alpha
                cur = t
            key = (int(batch.src[i]), int(batch.dst[i]))
            live[key] += 1.0
            out[i] = frozen[key] + live[key]
        for k, w in live.items():
            frozen[k] += w
    return out


def random_batch(rng: np.random.Generator, n: int, nodes: int, ticks: int) -> EdgeBatch:
    return EdgeBatch(
        rng.integers(0, nodes, n),
        rng.integers(0, nodes, n),
        np.sort(rng.integers(1, ticks + 1, n)),
    )
