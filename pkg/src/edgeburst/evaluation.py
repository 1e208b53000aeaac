"""ROC-AUC and experiment reports over pipeline output.

AUC is computed as the Mann-Whitney statistic via midranks:
P(score_pos > score_neg) + 0.5 * P(tie), which equals the trapezoidal
area under the ROC curve.  Scores are deterministic per configuration,
so an experiment runs the pipeline several times only to sample wall
times; the AUC is reported once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .ingest import LabeledStream
from .pipeline import PipelineConfig, PipelineResult, run_pipeline

__all__ = ["EvalReport", "roc_auc", "run_experiment", "write_report_jsonl", "write_report_csv"]


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve; ties get midrank treatment.

    Raises ValueError unless both classes are present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    if s.size and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    n = s.size
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    ends = np.r_[starts[1:], n]
    midranks = np.empty(n, dtype=np.float64)
    midranks[order] = np.repeat((starts + 1 + ends) / 2.0, ends - starts)
    rank_sum = float(midranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class EvalReport:
    """One experiment's quality, size and timing summary."""

    auc: float
    num_events: int
    num_anomalies: int
    wall_millis_by_phase: dict
    peak_sketch_bytes: int
    repeats: int = 1
    total_millis_samples: list = field(default_factory=list)
    total_millis_mean: float = 0.0
    total_millis_spread: float = 0.0

    def summary(self) -> str:
        return (
            f"auc={self.auc:.6f} events={self.num_events} anomalies={self.num_anomalies} "
            f"time={self.total_millis_mean:.1f}ms (+/- {self.total_millis_spread:.1f}ms "
            f"over {self.repeats} runs) sketch_bytes={self.peak_sketch_bytes}"
        )


def run_experiment(stream: LabeledStream, cfg: PipelineConfig, repeats: int = 1) -> EvalReport:
    """Run the pipeline ``repeats`` times; score once, time every run.

    Scores must be identical across runs (the pipeline is deterministic);
    a mismatch raises RuntimeError.  Spread is the sample standard
    deviation of total wall time, 0 for a single run.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if len(stream) == 0:
        raise ValueError("cannot evaluate an empty stream")
    results: list[PipelineResult] = []
    for _ in range(repeats):
        results.append(run_pipeline(stream.events, cfg))
    first = results[0].scores.score
    for r in results[1:]:
        if not np.array_equal(first, r.scores.score):
            raise RuntimeError("pipeline produced different scores across repeated runs")

    auc = roc_auc(first, stream.labels)
    totals = [r.stats.wall_millis_by_phase["total"] for r in results]
    phases: dict[str, float] = {}
    for key in results[0].stats.wall_millis_by_phase:
        phases[key] = float(np.mean([r.stats.wall_millis_by_phase[key] for r in results]))
    spread = float(np.std(totals, ddof=1)) if repeats > 1 else 0.0

    stats = results[0].stats
    per_sketch = stats.persistent_sketch_bytes // max(stats.persistent_sketch_count, 1)
    # Peak = persistent state plus each worker's bounded replay scratch
    # (at most two working triples).
    peak = stats.persistent_sketch_bytes + cfg.num_workers * 6 * per_sketch
    return EvalReport(
        auc=auc,
        num_events=len(stream),
        num_anomalies=stream.num_anomalies,
        wall_millis_by_phase=phases,
        peak_sketch_bytes=int(peak),
        repeats=repeats,
        total_millis_samples=[float(t) for t in totals],
        total_millis_mean=float(np.mean(totals)),
        total_millis_spread=spread,
    )


def write_report_jsonl(report: EvalReport, path: Union[str, Path]) -> None:
    """One summary line plus one line per timing sample."""
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "kind": "summary",
            "auc": report.auc,
            "num_events": report.num_events,
            "num_anomalies": report.num_anomalies,
            "repeats": report.repeats,
            "total_millis_mean": report.total_millis_mean,
            "total_millis_spread": report.total_millis_spread,
            "peak_sketch_bytes": report.peak_sketch_bytes,
            "wall_millis_by_phase": report.wall_millis_by_phase,
        }) + "\n")
        for i, millis in enumerate(report.total_millis_samples):
            fh.write(json.dumps({"kind": "timing", "repeat": i, "total_millis": millis}) + "\n")


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """Flat AUC-vs-time points, one row per repeat (plot-ready)."""
    with open(path, "w") as fh:
        fh.write("repeat,total_millis,auc\n")
        for i, millis in enumerate(report.total_millis_samples):
            fh.write(f"{i},{millis:.3f},{report.auc!r}\n")
