"""Offline anomaly scoring for timestamped edge streams.

Partition-parallel two-pass engine assigning a chi-squared anomaly
score to every edge of a network log, backed by constant-memory
mergeable frequency sketches (Count-Min or Frequent-Items).
"""

from .evaluation import EvalReport, roc_auc, run_experiment
from .ingest import (
    BurstSpec,
    LabeledStream,
    SyntheticSpec,
    generate_synthetic,
    load_synthetic_spec,
    parse_edge_csv,
)
from .pipeline import (
    EdgeBatch,
    EdgeEvent,
    PipelineConfig,
    PipelineResult,
    ScoreBatch,
    partition_stream,
    run_pipeline,
    write_scores_csv,
)
from .scoring import ScoredEdge, ScoreInputs, chi2_score, chi2_scores
from .sketch import (
    CountMinSketch,
    FrequentItemsSketch,
    SketchKey,
    edge_key,
    node_key,
)

__version__ = "0.1.0"

__all__ = [
    "BurstSpec",
    "CountMinSketch",
    "EdgeBatch",
    "EdgeEvent",
    "EvalReport",
    "FrequentItemsSketch",
    "LabeledStream",
    "PipelineConfig",
    "PipelineResult",
    "ScoreBatch",
    "ScoredEdge",
    "ScoreInputs",
    "SketchKey",
    "SyntheticSpec",
    "chi2_score",
    "chi2_scores",
    "edge_key",
    "generate_synthetic",
    "load_synthetic_spec",
    "node_key",
    "parse_edge_csv",
    "partition_stream",
    "roc_auc",
    "run_experiment",
    "run_pipeline",
    "write_scores_csv",
]
