"""Scikit-learn-style estimator facade over the cGAN segmenter.

Operates on plain arrays so the model drops into sklearn pipelines and
grid-search tooling: X is (N, H, W) grayscale in [0, 1], y is (N, H, W)
integer class maps, and sample_weight scales each slice's segmentation loss
(and its weight as a discriminator "real" pair).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ValidationError
from .metrics import foreground_dice
from .networks import DiscriminatorConfig, GeneratorConfig, LossWeights
from .training import TrainConfig, TrainMode, train_on_arrays
from .networks import init_model_state


def _check_images(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise ValidationError(f"X must be (N, H, W), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("X contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValidationError("X intensities must lie in [0, 1]")
    return X


def _check_labels(y, n: int, hw, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n, *hw):
        raise ValidationError(f"y must be (N, H, W) = {(n, *hw)}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ValidationError("y must contain integer class indices")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError(
            f"y class indices must lie in [0, {num_classes - 1}]"
        )
    return y


class CganSegmenter(BaseEstimator):
    """Conditional GAN segmenter with a fit/predict interface.

    The discriminator's mean patch score doubles as a per-slice confidence
    estimate (``confidence_scores``), the basis for active-learning queries.
    """

    def __init__(
        self,
        num_classes: int = 3,
        base_channels: int = 16,
        depth: int = 3,
        disc_channels: int = 16,
        disc_downsamples: int = 3,
        lambda_seg: float = 10.0,
        w_pseudo: float = 1.0,
        epochs: int = 60,
        batch_size: int = 8,
        learning_rate_g: float = 2e-4,
        learning_rate_d: float = 2e-4,
        mode: str = "from_scratch",
        random_state: int = 0,
    ):
        self.num_classes = num_classes
        self.base_channels = base_channels
        self.depth = depth
        self.disc_channels = disc_channels
        self.disc_downsamples = disc_downsamples
        self.lambda_seg = lambda_seg
        self.w_pseudo = w_pseudo
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate_g = learning_rate_g
        self.learning_rate_d = learning_rate_d
        self.mode = mode
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate_g=self.learning_rate_g,
            learning_rate_d=self.learning_rate_d,
            loss_weights=LossWeights(self.lambda_seg, self.w_pseudo),
            mode=TrainMode(self.mode),
            rng_seed=self.random_state,
        )

    def fit(self, X, y, sample_weight=None):
        X = _check_images(X)
        y = _check_labels(y, X.shape[0], X.shape[1:], self.num_classes)
        if sample_weight is None:
            w = np.ones(X.shape[0], dtype=np.float32)
        else:
            w = np.asarray(sample_weight, dtype=np.float32)
            if w.shape != (X.shape[0],):
                raise ValidationError(
                    f"sample_weight must be (N,), got {w.shape}"
                )
            if w.min() < 0:
                raise ValidationError("sample_weight must be >= 0")
        state = init_model_state(
            GeneratorConfig(self.num_classes, self.base_channels, self.depth,
                            self.random_state),
            DiscriminatorConfig(self.disc_channels, self.disc_downsamples,
                                self.random_state),
        )
        start = state if self.mode == "from_scratch" else self._fitted_or(state)
        self.model_state_, self.history_ = train_on_arrays(
            start, X[:, None], y, w, self._train_config()
        )
        return self

    def _fitted_or(self, fallback):
        return getattr(self, "model_state_", fallback)

    def _require_fitted(self):
        if not hasattr(self, "model_state_"):
            raise NotFittedError(
                "This CganSegmenter instance is not fitted yet; call fit first."
            )
        return self.model_state_

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel class probabilities, shape (N, C, H, W)."""
        import torch

        state = self._require_fitted()
        X = _check_images(X)
        state.generator.eval()
        out = []
        with torch.no_grad():
            for start in range(0, X.shape[0], 16):
                xb = torch.from_numpy(X[start:start + 16][:, None])
                out.append(state.generator(xb).numpy())
        return np.concatenate(out) if out else np.zeros(
            (0, self.num_classes, *X.shape[1:]), dtype=np.float32
        )

    def predict(self, X) -> np.ndarray:
        """Per-pixel class labels, shape (N, H, W)."""
        return np.argmax(self.predict_proba(X), axis=1)

    def confidence_scores(self, X, proba=None) -> np.ndarray:
        """Mean discriminator patch score per slice, shape (N,)."""
        import torch

        state = self._require_fitted()
        X = _check_images(X)
        if proba is None:
            proba = self.predict_proba(X)
        proba = np.asarray(proba, dtype=np.float32)
        state.discriminator.eval()
        scores = []
        with torch.no_grad():
            for start in range(0, X.shape[0], 16):
                xb = torch.from_numpy(X[start:start + 16][:, None])
                pb = torch.from_numpy(proba[start:start + 16])
                s = state.discriminator(xb, pb)
                scores.append(s.mean(dim=(1, 2, 3)).numpy())
        return np.concatenate(scores) if scores else np.zeros(0, dtype=np.float32)

    def score(self, X, y) -> float:
        """Mean foreground Dice over slices (sklearn score convention)."""
        X = _check_images(X)
        y = _check_labels(y, X.shape[0], X.shape[1:], self.num_classes)
        preds = self.predict(X)
        return float(
            np.mean([
                foreground_dice(p, g, self.num_classes)
                for p, g in zip(preds, y)
            ])
        )
