"""Synthetic 3-class cardiac phantom: bright blood-pool disk wrapped in a
darker myocardium ring over a noisy, textured background.

Per-volume geometry and contrast are sampled once and then drift smoothly
across slices, so slices within a volume are correlated while volumes differ
in difficulty (contrast, size, noise).  Class layout: 0 = background,
1 = ring, 2 = enclosed disk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .types import ImageSlice, LabelMap, LabelSource

BACKGROUND, RING, DISK = 0, 1, 2
NUM_CLASSES = 3

# Sampling ranges as fractions of min(H, W).  Worst-case extent:
# center offset + drift + outer radius = 0.15 + 0.33 = 0.48 < 0.5.
_CENTER_OFFSET = 0.09
_CENTER_DRIFT = 0.06
_DISK_RADIUS = (0.11, 0.20)
_RING_THICKNESS = (0.055, 0.10)
_RADIUS_DRIFT = 0.03
_MIN_SIDE = 32


@dataclass(frozen=True)
class PhantomConfig:
    num_volumes: int = 8
    slices_per_volume: int = 16
    height: int = 64
    width: int = 64
    noise_std: float = 0.08
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_volumes < 2:
            raise ValidationError("phantom: num_volumes must be >= 2")
        if self.slices_per_volume < 4:
            raise ValidationError("phantom: slices_per_volume must be >= 4")
        if self.height <= 0 or self.width <= 0:
            raise ValidationError("phantom: height and width must be positive")
        if min(self.height, self.width) < _MIN_SIDE:
            raise ValidationError(
                f"phantom: min(height, width) must be >= {_MIN_SIDE} so ring and "
                f"disk stay inside image bounds"
            )
        if self.noise_std < 0:
            raise ValidationError("phantom: noise_std must be >= 0")


def _smooth_texture(rng: np.random.Generator, h: int, w: int, amp: float) -> np.ndarray:
    """Low-frequency background texture from a bilinearly upsampled coarse grid."""
    gh, gw = 5, 5
    coarse = rng.standard_normal((gh, gw))
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.floor(ys).astype(int).clip(0, gh - 2)
    x0 = np.floor(xs).astype(int).clip(0, gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    tex = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
           + c10 * fy * (1 - fx) + c11 * fy * fx)
    return amp * tex


def generate_phantom_dataset(
    cfg: PhantomConfig,
) -> tuple[list[ImageSlice], list[LabelMap]]:
    """Generate the phantom deterministically from ``cfg.rng_seed``.

    Returns num_volumes * slices_per_volume paired slices and ground-truth
    label maps, ordered by volume then slice index.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    h, w = cfg.height, cfg.width
    m = float(min(h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    slices: list[ImageSlice] = []
    labels: list[LabelMap] = []
    for v in range(cfg.num_volumes):
        vol_id = f"v{v}"
        cy0 = h / 2 + rng.uniform(-_CENTER_OFFSET, _CENTER_OFFSET) * m
        cx0 = w / 2 + rng.uniform(-_CENTER_OFFSET, _CENTER_OFFSET) * m
        r_disk0 = rng.uniform(*_DISK_RADIUS) * m
        thickness = rng.uniform(*_RING_THICKNESS) * m
        amp_c = rng.uniform(0.0, _CENTER_DRIFT) * m
        amp_r = rng.uniform(0.0, _RADIUS_DRIFT) * m
        ph_y, ph_x, ph_r = rng.uniform(0, 2 * np.pi, size=3)
        bg_level = rng.uniform(0.15, 0.30)
        ring_level = rng.uniform(0.35, 0.60)
        disk_level = rng.uniform(0.70, 0.95)
        level_drift = rng.uniform(-0.03, 0.03)
        tex_amp = rng.uniform(0.02, 0.08)
        noise_scale = rng.uniform(0.8, 1.2) * cfg.noise_std

        for s in range(cfg.slices_per_volume):
            t = s / (cfg.slices_per_volume - 1)
            cy = cy0 + amp_c * np.sin(2 * np.pi * t + ph_y)
            cx = cx0 + amp_c * np.cos(2 * np.pi * t + ph_x)
            r_disk = r_disk0 + amp_r * np.sin(2 * np.pi * t + ph_r)
            r_outer = r_disk + thickness
            drift = level_drift * (t - 0.5)

            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            cls = np.zeros((h, w), dtype=np.uint8)
            cls[dist <= r_outer] = RING
            cls[dist <= r_disk] = DISK

            img = np.full((h, w), bg_level + drift, dtype=np.float64)
            img += _smooth_texture(rng, h, w, tex_amp)
            img[cls == RING] = ring_level + drift
            img[cls == DISK] = disk_level + drift
            img += rng.normal(0.0, noise_scale, size=(h, w))
            img = np.clip(img, 0.0, 1.0)

            sl = ImageSlice.make(vol_id, s, img.astype(np.float32))
            slices.append(sl)
            labels.append(LabelMap(sl.id, cls, LabelSource.GROUND_TRUTH))

    _check_all_classes_present(cfg, labels)
    return slices, labels


def _check_all_classes_present(cfg: PhantomConfig, labels: list[LabelMap]):
    per_vol: dict[str, set[int]] = {}
    for lm in labels:
        vol = lm.slice_id.split(":")[0]
        per_vol.setdefault(vol, set()).update(np.unique(lm.classes).tolist())
    for vol, present in per_vol.items():
        if present != {BACKGROUND, RING, DISK}:
            raise ValidationError(
                f"phantom: volume {vol} missing classes {sorted({0, 1, 2} - present)}"
            )
