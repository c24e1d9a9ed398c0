"""Core domain types: slices, label maps, probability maps, and the sample pool."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import ShapeError, ValidationError

PROB_SUM_TOL = 1e-5


class LabelSource(Enum):
    GROUND_TRUTH = "ground_truth"
    EXPERT = "expert"
    PSEUDO = "pseudo"


def slice_id(volume_id: str, index: int) -> str:
    return f"{volume_id}:{index}"


@dataclass(frozen=True)
class ImageSlice:
    """One 2D grayscale slice, the unit of labeling and querying.

    Pixels are float32 intensities in [0, 1]; ``id`` is ``"<volume>:<index>"``.
    """

    id: str
    volume_id: str
    index: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2:
            raise ValidationError(f"slice {self.id}: pixels must be 2D, got {px.ndim}D")
        if not np.all(np.isfinite(px)):
            raise ValidationError(f"slice {self.id}: non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError(
                f"slice {self.id}: pixel values outside [0, 1] "
                f"(min {px.min():.4g}, max {px.max():.4g})"
            )
        if self.index < 0:
            raise ValidationError(f"slice {self.id}: negative index {self.index}")
        if self.id != slice_id(self.volume_id, self.index):
            raise ValidationError(
                f"slice id {self.id!r} does not match volume {self.volume_id!r} "
                f"index {self.index}"
            )
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @classmethod
    def make(cls, volume_id: str, index: int, pixels: np.ndarray) -> "ImageSlice":
        return cls(slice_id(volume_id, index), volume_id, index, pixels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class LabelMap:
    """Integer class map over a slice grid, tagged with where it came from."""

    slice_id: str
    classes: np.ndarray
    source: LabelSource

    def __post_init__(self):
        cls = np.asarray(self.classes)
        if cls.ndim != 2:
            raise ValidationError(
                f"label map {self.slice_id}: classes must be 2D, got {cls.ndim}D"
            )
        if not np.issubdtype(cls.dtype, np.integer):
            if not np.all(cls == np.round(cls)):
                raise ValidationError(
                    f"label map {self.slice_id}: non-integer class values"
                )
        if cls.size and cls.min() < 0:
            raise ValidationError(f"label map {self.slice_id}: negative class values")
        if not isinstance(self.source, LabelSource):
            raise ValidationError(f"label map {self.slice_id}: source tag not set")
        object.__setattr__(self, "classes", np.ascontiguousarray(cls.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def with_source(self, source: LabelSource) -> "LabelMap":
        return LabelMap(self.slice_id, self.classes, source)

    def check_classes(self, num_classes: int) -> "LabelMap":
        """Raise if any entry is >= num_classes, naming the offending pixel."""
        bad = np.argwhere(self.classes >= num_classes)
        if bad.size:
            r, c = bad[0]
            raise ValidationError(
                f"label map {self.slice_id}: class {int(self.classes[r, c])} at "
                f"pixel ({int(r)}, {int(c)}) exceeds num_classes={num_classes}"
            )
        return self


@dataclass(frozen=True)
class ProbMap:
    """Per-class probability map of shape (C, H, W); pixel sums are 1."""

    slice_id: str
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float32)
        if p.ndim != 3:
            raise ValidationError(
                f"prob map {self.slice_id}: probs must be (C, H, W), got {p.ndim}D"
            )
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"prob map {self.slice_id}: non-finite probabilities")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValidationError(f"prob map {self.slice_id}: values outside [0, 1]")
        sums = p.sum(axis=0)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
            raise ValidationError(
                f"prob map {self.slice_id}: per-pixel sums deviate from 1 by "
                f"{np.abs(sums - 1.0).max():.2e} (> {PROB_SUM_TOL:g})"
            )
        object.__setattr__(self, "probs", np.ascontiguousarray(p))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]


def onehot_encode(labels: LabelMap, num_classes: int) -> ProbMap:
    """One-hot encode a label map into a (C, H, W) probability map."""
    labels.check_classes(num_classes)
    h, w = labels.shape
    probs = np.zeros((num_classes, h, w), dtype=np.float32)
    rows, cols = np.indices((h, w))
    probs[labels.classes, rows, cols] = 1.0
    return ProbMap(labels.slice_id, probs)


def argmax_labels(probs: ProbMap, source: LabelSource = LabelSource.PSEUDO) -> LabelMap:
    """Decode a probability map to class indices; ties go to the lowest class."""
    p = probs.probs
    if np.any(np.isnan(p)):
        raise ValidationError(f"prob map {probs.slice_id}: NaN probabilities")
    return LabelMap(probs.slice_id, np.argmax(p, axis=0).astype(np.uint8), source)


def check_same_shape(a, b, what: str = "arrays"):
    sa = a.shape if hasattr(a, "shape") else np.asarray(a).shape
    sb = b.shape if hasattr(b, "shape") else np.asarray(b).shape
    if tuple(sa) != tuple(sb):
        raise ShapeError(f"{what}: shape mismatch {tuple(sa)} vs {tuple(sb)}")


@dataclass
class SamplePool:
    """Bookkeeping of the evolving labeled / unlabeled partition.

    ``labeled`` holds ids with expert or ground-truth labels, ``unlabeled``
    the remaining pool.  ``queried_history`` records each cycle's query set;
    ``pseudo`` maps currently-unlabeled ids to their latest pseudo labels.
    """

    labeled: set[str] = field(default_factory=set)
    unlabeled: set[str] = field(default_factory=set)
    queried_history: list[list[str]] = field(default_factory=list)
    pseudo: dict[str, LabelMap] = field(default_factory=dict)

    def __post_init__(self):
        self.labeled = set(self.labeled)
        self.unlabeled = set(self.unlabeled)
        self.validate()

    def validate(self):
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise ValidationError(
                f"pool: {len(overlap)} ids in both labeled and unlabeled "
                f"(e.g. {sorted(overlap)[0]!r})"
            )
        seen: set[str] = set()
        for i, q in enumerate(self.queried_history):
            qs = set(q)
            dup = qs & seen
            if dup:
                raise ValidationError(
                    f"pool: query sets overlap across cycles (e.g. {sorted(dup)[0]!r} "
                    f"reappears in cycle {i})"
                )
            seen |= qs
        stray = set(self.pseudo) - self.unlabeled
        if stray:
            raise ValidationError(
                f"pool: pseudo labels for non-pool ids (e.g. {sorted(stray)[0]!r})"
            )

    @property
    def all_ids(self) -> set[str]:
        return self.labeled | self.unlabeled

    def mark_queried(self, query_ids: list[str]):
        """Move a query set from the unlabeled pool into the labeled set."""
        qs = set(query_ids)
        missing = qs - self.unlabeled
        if missing:
            raise ValidationError(
                f"pool: queried ids not in unlabeled pool (e.g. {sorted(missing)[0]!r})"
            )
        self.queried_history.append(list(query_ids))
        self.unlabeled -= qs
        self.labeled |= qs
        for sid in qs:
            self.pseudo.pop(sid, None)
        self.validate()

    def set_pseudo(self, labels: dict[str, LabelMap]):
        stray = set(labels) - self.unlabeled
        if stray:
            raise ValidationError(
                f"pool: pseudo labels for ids outside the pool "
                f"(e.g. {sorted(stray)[0]!r})"
            )
        self.pseudo = dict(labels)

    def copy(self) -> "SamplePool":
        return SamplePool(
            labeled=set(self.labeled),
            unlabeled=set(self.unlabeled),
            queried_history=[list(q) for q in self.queried_history],
            pseudo=dict(self.pseudo),
        )
