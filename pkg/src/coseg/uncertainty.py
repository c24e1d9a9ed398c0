"""Discriminator-based confidence: per-slice scores, per-pixel unreliability
maps, and ranked query selection over the unlabeled pool.

The patch score map is reduced to a scalar with the arithmetic mean of patch
scores by default ("min" is available for worst-patch sensitivity).  Low
scores flag slices whose predicted segmentation needs an expert.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ValidationError
from .networks import ModelState, discriminator_forward
from .training import predict_labels
from .types import ImageSlice, LabelMap, ProbMap

REDUCTIONS = ("mean", "min")


@dataclass(frozen=True)
class ConfidenceRecord:
    slice_id: str
    score: float
    rank: int  # 0 = least confident


@dataclass(frozen=True)
class PoolScore:
    """Scoring artifacts for one pool slice: confidence plus the prediction."""

    slice_id: str
    score: float
    prob: ProbMap
    label: LabelMap


def reduce_scores(score_map: np.ndarray, reduction: str = "mean") -> float:
    if reduction not in REDUCTIONS:
        raise ValidationError(f"unknown score reduction {reduction!r}")
    return float(score_map.mean() if reduction == "mean" else score_map.min())


def confidence_score(
    state: ModelState, image: ImageSlice, seg: ProbMap, reduction: str = "mean"
) -> float:
    """Scalar confidence for an (image, segmentation) pair."""
    return reduce_scores(discriminator_forward(state, image, seg), reduction)


def uncertainty_map(state: ModelState, image: ImageSlice, seg: ProbMap) -> np.ndarray:
    """Per-pixel unreliability: 1 - patch score, nearest-neighbor upsampled.

    Values are constant within each patch cell's footprint.
    """
    scores = discriminator_forward(state, image, seg)
    h, w = image.shape
    sh, sw = scores.shape
    u = 1.0 - scores
    return np.kron(u, np.ones((h // sh, w // sw), dtype=u.dtype))


def score_pool(
    state: ModelState, dataset, ids, reduction: str = "mean"
) -> list[PoolScore]:
    """Predict and score every id; results ordered by slice id."""
    ordered = sorted(ids)
    slices = [dataset.image(sid) for sid in ordered]
    preds = predict_labels(state, slices)
    out = []
    for sl, (prob, label) in zip(slices, preds):
        out.append(
            PoolScore(sl.id, confidence_score(state, sl, prob, reduction), prob, label)
        )
    return out


def rank_scores(scored: list[PoolScore]) -> list[ConfidenceRecord]:
    """Ascending by (score, slice id); rank 0 is the least confident."""
    ordered = sorted(scored, key=lambda s: (s.score, s.slice_id))
    return [ConfidenceRecord(s.slice_id, s.score, r) for r, s in enumerate(ordered)]


def select_lowest(records: list[ConfidenceRecord], budget: int) -> list[str]:
    if budget < 0:
        raise ValidationError(f"query budget must be >= 0, got {budget}")
    take = min(budget, len(records))
    by_rank = sorted(records, key=lambda r: r.rank)
    return [r.slice_id for r in by_rank[:take]]


def rank_and_select(
    state: ModelState,
    dataset,
    pool,
    budget: int,
    reduction: str = "mean",
) -> tuple[list[str], list[ConfidenceRecord]]:
    """Pick the ``budget`` least-confident pool slices for expert annotation.

    Returns the query ids (lowest score first, lexicographic tie-break) and
    confidence records covering the whole pool.
    """
    scored = score_pool(state, dataset, sorted(pool.unlabeled), reduction)
    records = rank_scores(scored)
    return select_lowest(records, budget), records


def write_ranking_csv(
    records: list[ConfidenceRecord], selected: list[str], path
) -> Path:
    path = Path(path)
    chosen = set(selected)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slice_id", "score", "rank", "selected_flag"])
        for rec in sorted(records, key=lambda r: r.rank):
            writer.writerow(
                [rec.slice_id, f"{rec.score:.6f}", rec.rank,
                 int(rec.slice_id in chosen)]
            )
    return path


def save_uncertainty_png(u: np.ndarray, path):
    """Store a [0,1] unreliability map as 8-bit grayscale (255 = unreliable)."""
    arr = np.round(np.clip(u, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
