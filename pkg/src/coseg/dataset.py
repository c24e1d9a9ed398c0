"""Dataset container and on-disk persistence.

Layout of a dataset directory:

    manifest.json   name, num_classes, height, width, slice records
    images/*.png    16-bit grayscale, intensity = round(pixel * 65535)
    labels/*.png    8-bit grayscale, pixel value = class index

Pool splits are stored separately as pools.json with labeled / unlabeled /
test id lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import FormatError, ValidationError
from .types import ImageSlice, LabelMap, LabelSource, SamplePool

MANIFEST_NAME = "manifest.json"
POOLS_NAME = "pools.json"
IMAGE_SCALE = 65535


@dataclass
class Dataset:
    """In-memory dataset: ordered slices with paired label maps."""

    name: str
    num_classes: int
    height: int
    width: int
    slices: dict[str, ImageSlice] = field(default_factory=dict)
    labels: dict[str, LabelMap] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)

    @classmethod
    def from_pairs(
        cls,
        slices: list[ImageSlice],
        labels: list[LabelMap],
        name: str = "phantom",
        num_classes: int = 3,
    ) -> "Dataset":
        if len(slices) != len(labels):
            raise ValidationError(
                f"dataset: {len(slices)} slices vs {len(labels)} labels"
            )
        ds = cls(name, num_classes, slices[0].shape[0], slices[0].shape[1])
        for sl, lm in zip(slices, labels):
            if lm.slice_id != sl.id:
                raise ValidationError(
                    f"dataset: label {lm.slice_id} paired with slice {sl.id}"
                )
            if sl.shape != (ds.height, ds.width) or lm.shape != sl.shape:
                raise ValidationError(f"dataset: inconsistent shape for {sl.id}")
            lm.check_classes(num_classes)
            if sl.id in ds.slices:
                raise ValidationError(f"dataset: duplicate slice id {sl.id}")
            ds.slices[sl.id] = sl
            ds.labels[sl.id] = lm
            ds.order.append(sl.id)
        return ds

    def __len__(self) -> int:
        return len(self.order)

    @property
    def ids(self) -> list[str]:
        return list(self.order)

    @property
    def volume_ids(self) -> list[str]:
        seen: list[str] = []
        for sid in self.order:
            vol = self.slices[sid].volume_id
            if vol not in seen:
                seen.append(vol)
        return seen

    def ids_of_volumes(self, volume_ids) -> list[str]:
        wanted = set(volume_ids)
        return [sid for sid in self.order if self.slices[sid].volume_id in wanted]

    def image(self, sid: str) -> ImageSlice:
        return self.slices[sid]

    def label(self, sid: str) -> LabelMap:
        return self.labels[sid]

    def pairs(self, ids) -> list[tuple[ImageSlice, LabelMap]]:
        return [(self.slices[sid], self.labels[sid]) for sid in ids]


def _file_stem(sid: str) -> str:
    return sid.replace(":", "_")


def write_image_png(pixels: np.ndarray, path: Path):
    """Store [0,1] float intensities as 16-bit grayscale PNG."""
    q = np.round(np.asarray(pixels, dtype=np.float64) * IMAGE_SCALE).astype(np.uint16)
    Image.fromarray(q, mode="I;16").save(path)


def read_image_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path)).astype(np.float32)
    return arr / IMAGE_SCALE


def write_label_png(classes: np.ndarray, path: Path):
    Image.fromarray(np.asarray(classes, dtype=np.uint8), mode="L").save(path)


def read_label_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.uint8)


def save_dataset(ds: Dataset, path) -> Path:
    """Write a dataset directory; returns the directory path."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    records = []
    for sid in ds.order:
        sl = ds.slices[sid]
        lm = ds.labels[sid]
        stem = _file_stem(sid)
        image_file = f"images/{stem}.png"
        label_file = f"labels/{stem}.png"
        write_image_png(sl.pixels, root / image_file)
        write_label_png(lm.classes, root / label_file)
        records.append(
            {
                "id": sid,
                "volume_id": sl.volume_id,
                "index": sl.index,
                "image_file": image_file,
                "label_file": label_file,
                "source": lm.source.value,
            }
        )
    manifest = {
        "name": ds.name,
        "num_classes": ds.num_classes,
        "height": ds.height,
        "width": ds.width,
        "slices": records,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise IOError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed manifest {manifest_path}: {e}") from e
    for key in ("name", "num_classes", "height", "width", "slices"):
        if key not in manifest:
            raise FormatError(f"manifest {manifest_path} missing key {key!r}")

    ds = Dataset(
        manifest["name"],
        int(manifest["num_classes"]),
        int(manifest["height"]),
        int(manifest["width"]),
    )
    for rec in manifest["slices"]:
        sid = rec["id"]
        image_path = root / rec["image_file"]
        label_path = root / rec["label_file"]
        if not image_path.exists():
            raise FormatError(f"slice {sid}: missing image file {image_path}")
        if not label_path.exists():
            raise FormatError(f"slice {sid}: missing label file {label_path}")
        pixels = read_image_png(image_path)
        classes = read_label_png(label_path)
        if pixels.shape != (ds.height, ds.width):
            raise FormatError(
                f"slice {sid}: image shape {pixels.shape} does not match manifest "
                f"({ds.height}, {ds.width})"
            )
        if classes.shape != pixels.shape:
            raise FormatError(
                f"slice {sid}: label shape {classes.shape} does not match image "
                f"{pixels.shape}"
            )
        if classes.max(initial=0) >= ds.num_classes:
            raise FormatError(
                f"slice {sid}: label values exceed num_classes={ds.num_classes}"
            )
        sl = ImageSlice(sid, rec["volume_id"], int(rec["index"]), pixels)
        lm = LabelMap(sid, classes, LabelSource(rec["source"]))
        if sid in ds.slices:
            raise FormatError(f"manifest lists duplicate id {sid}")
        ds.slices[sid] = sl
        ds.labels[sid] = lm
        ds.order.append(sid)
    return ds


def split_pools(
    ds: Dataset, base_volume_ids, holdout_volume_ids
) -> tuple[SamplePool, list[str]]:
    """Partition the dataset: base volumes -> labeled, holdout -> test,
    everything else -> unlabeled pool."""
    base = list(base_volume_ids)
    holdout = list(holdout_volume_ids)
    known = set(ds.volume_ids)
    unknown = (set(base) | set(holdout)) - known
    if unknown:
        raise ValidationError(f"split: unknown volume ids {sorted(unknown)}")
    overlap = set(base) & set(holdout)
    if overlap:
        raise ValidationError(
            f"split: volumes in both base and holdout: {sorted(overlap)}"
        )
    labeled = ds.ids_of_volumes(base)
    test = ds.ids_of_volumes(holdout)
    rest = [sid for sid in ds.order if sid not in set(labeled) | set(test)]
    pool = SamplePool(labeled=set(labeled), unlabeled=set(rest))
    return pool, test


def save_pools(pool: SamplePool, test_ids, path):
    payload = {
        "labeled": sorted(pool.labeled),
        "unlabeled": sorted(pool.unlabeled),
        "test": sorted(test_ids),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_pools(path) -> tuple[SamplePool, list[str]]:
    p = Path(path)
    if not p.exists():
        raise IOError(f"no pools file at {p}")
    payload = json.loads(p.read_text())
    for key in ("labeled", "unlabeled", "test"):
        if key not in payload:
            raise FormatError(f"pools file {p} missing key {key!r}")
    pool = SamplePool(
        labeled=set(payload["labeled"]), unlabeled=set(payload["unlabeled"])
    )
    return pool, list(payload["test"])
