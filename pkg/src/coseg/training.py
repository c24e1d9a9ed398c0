"""Alternating cGAN optimization over a mixed expert/pseudo-labeled set.

One discriminator step then one generator step per batch (pix2pix schedule),
Adam with constant rates.  Runs are deterministic: shuffling comes from a
numpy Generator seeded by the config, parameter init from explicit torch
Generators, and torch runs in deterministic mode.  A ``ModelState`` passed in
is never mutated; training returns a fresh state.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import TrainingDivergedError, ValidationError
from .losses import EPS, adversarial_losses
from .networks import (
    LossWeights,
    ModelState,
    PatchDiscriminator,
    UNetGenerator,
    init_model_state,
)
from .types import ImageSlice, LabelMap, LabelSource, ProbMap, argmax_labels

ADAM_BETAS = (0.5, 0.999)
PREDICT_BATCH = 16


class TrainMode(Enum):
    FROM_SCRATCH = "from_scratch"
    INCREMENTAL = "incremental"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate_g: float = 2e-4
    learning_rate_d: float = 2e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    mode: TrainMode = TrainMode.FROM_SCRATCH
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("train config: epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("train config: batch_size must be >= 1")
        for name, lr in (("learning_rate_g", self.learning_rate_g),
                         ("learning_rate_d", self.learning_rate_d)):
            if not (lr > 0 and math.isfinite(lr)):
                raise ValidationError(f"train config: {name} must be positive finite")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    d_loss: float
    g_loss: float
    seg_loss: float


def sample_weight_for(source: LabelSource, w_pseudo: float) -> float:
    return w_pseudo if source is LabelSource.PSEUDO else 1.0


def train_model(
    state: ModelState,
    training_set: list[tuple[ImageSlice, LabelMap]],
    cfg: TrainConfig,
) -> tuple[ModelState, list[EpochRecord]]:
    """Train on (slice, label) pairs; returns a new state and per-epoch history.

    Per-sample segmentation weight is 1.0 for expert/ground-truth labels and
    ``cfg.loss_weights.w_pseudo`` for pseudo labels; the same weight is applied
    to each sample's contribution as a discriminator "real" pair, so w_pseudo=0
    makes training fully invariant to pseudo label content.
    """
    if not training_set:
        raise ValidationError("training: empty training set")
    num_classes = state.gen_cfg.num_classes
    shape = training_set[0][0].shape
    for sl, lm in training_set:
        if sl.shape != shape or lm.shape != shape:
            raise ValidationError(
                f"training: slice {sl.id} shape {sl.shape}/{lm.shape} differs "
                f"from {shape}"
            )
        if lm.slice_id != sl.id:
            raise ValidationError(
                f"training: label {lm.slice_id} paired with slice {sl.id}"
            )
        lm.check_classes(num_classes)

    x = np.stack([sl.pixels for sl, _ in training_set])[:, None, :, :]
    y = np.stack([lm.classes for _, lm in training_set]).astype(np.int64)
    w = np.array(
        [sample_weight_for(lm.source, cfg.loss_weights.w_pseudo)
         for _, lm in training_set],
        dtype=np.float32,
    )
    return train_on_arrays(state, x, y, w, cfg)


def train_on_arrays(
    state: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    cfg: TrainConfig,
) -> tuple[ModelState, list[EpochRecord]]:
    """Array-level training core: x (N,1,H,W) in [0,1], y (N,H,W) int,
    weights (N,)."""
    torch.use_deterministic_algorithms(True)
    if cfg.mode is TrainMode.FROM_SCRATCH:
        new_state = init_model_state(state.gen_cfg, state.disc_cfg, seed=cfg.rng_seed)
    else:
        new_state = ModelState(
            generator=copy.deepcopy(state.generator),
            discriminator=copy.deepcopy(state.discriminator),
            gen_cfg=state.gen_cfg,
            disc_cfg=state.disc_cfg,
            seed=cfg.rng_seed,
        )
    gen: UNetGenerator = new_state.generator
    disc: PatchDiscriminator = new_state.discriminator
    gen.train()
    disc.train()
    gen.check_input_shape(x.shape[-2:])
    disc.check_input_shape(x.shape[-2:])

    n = x.shape[0]
    num_classes = state.gen_cfg.num_classes
    xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    yt = torch.from_numpy(np.ascontiguousarray(y, dtype=np.int64))
    wt = torch.from_numpy(np.ascontiguousarray(weights, dtype=np.float32))
    y_onehot = F.one_hot(yt, num_classes).permute(0, 3, 1, 2).float()

    opt_g = torch.optim.Adam(gen.parameters(), cfg.learning_rate_g, betas=ADAM_BETAS)
    opt_d = torch.optim.Adam(disc.parameters(), cfg.learning_rate_d, betas=ADAM_BETAS)
    rng = np.random.default_rng(cfg.rng_seed)
    lam = cfg.loss_weights.lambda_seg

    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size].copy())
            xb, yb, wb, ohb = xt[idx], yt[idx], wt[idx], y_onehot[idx]

            # discriminator: real = (image, target labels), fake = (image, G(image))
            fake = gen(xb).detach()
            d_loss, _ = adversarial_losses(
                disc(xb, ohb), disc(xb, fake), real_weights=wb
            )
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # generator: fool the discriminator + weighted cross-entropy
            pred = gen(xb)
            g_adv = (-disc(xb, pred).clamp_min(EPS).log()).mean()
            p_target = pred.gather(1, yb.unsqueeze(1)).clamp_min(EPS)
            per_sample_ce = (-p_target.log()).reshape(xb.shape[0], -1).mean(dim=1)
            seg = (wb * per_sample_ce).mean()
            (g_adv + lam * seg).backward()
            opt_g.step()
            opt_g.zero_grad()

            sums += (float(d_loss), float(g_adv), float(seg))
            batches += 1

        means = sums / batches
        if not np.all(np.isfinite(means)):
            raise TrainingDivergedError(epoch)
        history.append(EpochRecord(epoch, *means))

    new_state.train_cfg = cfg
    gen.eval()
    disc.eval()
    return new_state, history


def predict_labels(
    state: ModelState, slices: list[ImageSlice]
) -> list[tuple[ProbMap, LabelMap]]:
    """Batch inference; pseudo-label outputs in input order."""
    if not slices:
        return []
    gen = state.generator
    gen.eval()
    out: list[tuple[ProbMap, LabelMap]] = []
    with torch.no_grad():
        for start in range(0, len(slices), PREDICT_BATCH):
            chunk = slices[start:start + PREDICT_BATCH]
            xb = torch.from_numpy(
                np.stack([sl.pixels for sl in chunk])[:, None, :, :]
            )
            probs = gen(xb).numpy()
            for sl, p in zip(chunk, probs):
                pm = ProbMap(sl.id, p)
                out.append((pm, argmax_labels(pm, LabelSource.PSEUDO)))
    return out


def incremental_config(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, mode=TrainMode.INCREMENTAL)


def save_history_csv(history: list[EpochRecord], path):
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "d_loss", "g_loss", "seg_loss"])
        for rec in history:
            writer.writerow(
                [rec.epoch, f"{rec.d_loss:.6f}", f"{rec.g_loss:.6f}",
                 f"{rec.seg_loss:.6f}"]
            )
