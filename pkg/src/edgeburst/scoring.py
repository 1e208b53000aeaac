"""Chi-squared anomaly scoring over sketch estimates.

An edge's score compares its current-tick count against its historical
mean.  With ``a_hat`` the estimated count at the current tick,
``s_hat`` the estimated cumulative count through the current tick, and
``t`` the 1-based tick index, the score is the two-category
goodness-of-fit statistic in closed form:

    score = (a_hat - s_hat / t)^2 * t^2 / (s_hat * (t - 1))

A steady edge (same count every tick) scores near zero; a burst far
above the historical mean scores large.  Degenerate inputs (t = 1 or
s_hat = 0) score exactly 0 -- the formula would divide by zero there,
and a first observation carries no evidence of change.

The relational variant scores the edge plus both endpoint nodes and
takes the maximum, so single-source fan-out bursts surface even when
each individual edge is fresh.  It also decays sketch contents at tick
boundaries instead of clearing them, keeping a geometric memory of the
recent past.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import EdgeEvent

__all__ = [
    "ScoreInputs",
    "ScoredEdge",
    "chi2_score",
    "chi2_scores",
    "score_edge_plain",
    "score_edge_relational",
    "decay_factor",
    "apply_decay",
]


@dataclass(frozen=True)
class ScoreInputs:
    """One (a_hat, s_hat, t) triple feeding the chi-squared statistic."""

    a_hat: float
    s_hat: float
    t: int

    def score(self) -> float:
        return chi2_score(self.a_hat, self.s_hat, self.t)


@dataclass(frozen=True)
class ScoredEdge:
    """An edge with its anomaly score and audit intermediates.

    ``components`` holds (edge, source-node, destination-node) scores;
    the node components are zero outside the relational variant.  The
    (a_hat, s_hat) pair is the edge-level estimate the score was
    computed from.
    """

    edge: Optional["EdgeEvent"]
    score: float
    components: tuple[float, float, float]
    a_hat: float
    s_hat: float


def chi2_score(a_hat: float, s_hat: float, t: int) -> float:
    """Closed-form two-category chi-squared score; 0 on degenerate input.

    Never returns NaN or infinity for finite non-negative inputs.
    """
    tf = float(t)
    if tf <= 1.0 or s_hat <= 0.0:
        return 0.0
    diff = a_hat - s_hat / tf
    return diff * diff * (tf * tf) / (s_hat * (tf - 1.0))


def chi2_scores(a_hat, s_hat, t) -> np.ndarray:
    """Vectorized chi2_score; bit-identical to the scalar path."""
    a = np.asarray(a_hat, dtype=np.float64)
    s = np.asarray(s_hat, dtype=np.float64)
    tf = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = a - s / tf
        raw = diff * diff * (tf * tf) / (s * (tf - 1.0))
    return np.where((tf <= 1.0) | (s <= 0.0), 0.0, raw)


def score_edge_plain(ce_est: float, cs_est: float, t: int) -> float:
    """Edge-only score from frozen current/cumulative estimates."""
    return chi2_score(ce_est, cs_est, t)


def score_edge_relational(
    edge_in: ScoreInputs,
    src_in: ScoreInputs,
    dst_in: ScoreInputs,
    edge: Optional["EdgeEvent"] = None,
) -> ScoredEdge:
    """Max of edge, source-node and destination-node scores."""
    components = (edge_in.score(), src_in.score(), dst_in.score())
    return ScoredEdge(
        edge=edge,
        score=max(components),
        components=components,
        a_hat=edge_in.a_hat,
        s_hat=edge_in.s_hat,
    )


def decay_factor(alpha: float, mode: str = "constant", tick: int = 0) -> float:
    """Per-boundary decay multiplier.

    ``constant`` applies alpha at every tick boundary.  ``inverse_tick``
    applies alpha^(1/t) entering global tick t, a decay that weakens at
    later ticks; it needs the 1-based tick being entered.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"decay alpha must be in (0, 1], got {alpha}")
    if mode == "constant":
        return alpha
    if mode == "inverse_tick":
        if tick < 1:
            raise ValueError(f"inverse_tick decay needs a tick >= 1, got {tick}")
        return alpha ** (1.0 / float(tick))
    raise ValueError(f"unknown decay mode {mode!r}")


def apply_decay(sketches: Iterable, alpha: float, mode: str = "constant", tick: int = 0) -> None:
    """Scale a partition's current-count sketches at a tick boundary.

    Called once per boundary, before the new tick's updates.  The plain
    (non-relational) variant clears instead of decaying; that path uses
    the sketches' clear() directly.
    """
    factor = decay_factor(alpha, mode, tick)
    for sketch in sketches:
        sketch.scale(factor)
