"""Conditional GAN architecture: encoder-decoder generator with skip
connections and a patch-based conditional discriminator.

Kept deliberately small (no normalization layers) so training stays fast and
deterministic on CPU.  Parameter init uses an explicit torch Generator, so
identical configs and seeds always produce identical parameters.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
import torch
from torch import nn

from .exceptions import FormatError, ShapeError, ValidationError
from .types import ImageSlice, ProbMap, check_same_shape

if TYPE_CHECKING:
    from .training import TrainConfig

CHECKPOINT_MAGIC = "COSEG-CKPT-v1"


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int = 3
    base_channels: int = 16
    depth: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("generator: num_classes must be >= 2")
        if self.base_channels < 1:
            raise ValidationError("generator: base_channels must be >= 1")
        if self.depth < 1:
            raise ValidationError("generator: depth must be >= 1")


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 16
    num_downsamples: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValidationError("discriminator: base_channels must be >= 1")
        if self.num_downsamples < 1:
            raise ValidationError("discriminator: num_downsamples must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    lambda_seg: float = 10.0
    w_pseudo: float = 1.0

    def __post_init__(self):
        if not self.lambda_seg > 0:
            raise ValidationError("loss weights: lambda_seg must be > 0")
        if not 0.0 <= self.w_pseudo <= 1.0:
            raise ValidationError("loss weights: w_pseudo must be in [0, 1]")


class _Down(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(cout, cout, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class UNetGenerator(nn.Module):
    """Encoder-decoder with skip connections; softmax class probabilities out."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        base, depth = cfg.base_channels, cfg.depth
        self.inc = nn.Sequential(nn.Conv2d(1, base, 3, 1, 1), nn.ReLU(inplace=True))
        self.down = nn.ModuleList()
        ch = base
        for _ in range(depth):
            self.down.append(_Down(ch, ch * 2))
            ch *= 2
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for _ in range(depth):
            self.up.append(nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1))
            # input channels double after concatenating the skip tensor
            self.fuse.append(
                nn.Sequential(nn.Conv2d(ch, ch // 2, 3, 1, 1), nn.ReLU(inplace=True))
            )
            ch //= 2
        self.head = nn.Conv2d(ch, cfg.num_classes, 1)
        _init_params(self, cfg.rng_seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, 1, H, W) -> per-pixel class probabilities (B, C, H, W)."""
        self.check_input_shape(x.shape[-2:])
        h = self.inc(x)
        skips = []
        for down in self.down:
            skips.append(h)
            h = down(h)
        for up, fuse, skip in zip(self.up, self.fuse, reversed(skips)):
            h = up(h)
            h = fuse(torch.cat([h, skip], dim=1))
        return torch.softmax(self.head(h), dim=1)

    def check_input_shape(self, hw):
        h, w = int(hw[0]), int(hw[1])
        f = 2 ** self.cfg.depth
        if h % f or w % f:
            raise ShapeError(
                f"generator: input {h}x{w} not divisible by 2^depth={f}"
            )


class PatchDiscriminator(nn.Module):
    """Patch-level realness scores for an (image, segmentation) pair.

    Input is the channel concatenation of the image and a C-channel
    segmentation; output is a (B, 1, H/2^n, W/2^n) score map in (0, 1).
    """

    def __init__(self, cfg: DiscriminatorConfig, num_classes: int = 3):
        super().__init__()
        self.cfg = cfg
        self.num_classes = num_classes
        layers: list[nn.Module] = []
        cin = 1 + num_classes
        cout = cfg.base_channels
        for _ in range(cfg.num_downsamples):
            layers += [nn.Conv2d(cin, cout, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
            cin = cout
            cout = min(cout * 2, cfg.base_channels * 8)
        layers.append(nn.Conv2d(cin, 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)
        _init_params(self, cfg.rng_seed)

    def forward(self, image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
        self.check_input_shape(image.shape[-2:])
        if image.shape[-2:] != seg.shape[-2:]:
            raise ShapeError(
                f"discriminator: image {tuple(image.shape[-2:])} vs seg "
                f"{tuple(seg.shape[-2:])}"
            )
        if seg.shape[1] != self.num_classes:
            raise ShapeError(
                f"discriminator: seg has {seg.shape[1]} channels, expected "
                f"{self.num_classes}"
            )
        scores = torch.sigmoid(self.net(torch.cat([image, seg], dim=1)))
        # keep scores in the open interval so downstream logs stay finite
        return scores.clamp(1e-7, 1 - 1e-7)

    def check_input_shape(self, hw):
        h, w = int(hw[0]), int(hw[1])
        f = 2 ** self.cfg.num_downsamples
        if h % f or w % f:
            raise ShapeError(
                f"discriminator: input {h}x{w} not divisible by "
                f"2^num_downsamples={f}"
            )
        rf = self.receptive_field()
        if rf >= min(h, w):
            raise ShapeError(
                f"discriminator: receptive field {rf} covers the whole "
                f"{h}x{w} image; patch-level judgments need rf < min(H, W)"
            )

    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for _ in range(self.cfg.num_downsamples):
            rf += 3 * jump  # k=4
            jump *= 2
        return rf + 2 * jump  # final k=3 head


def _init_params(module: nn.Module, seed: int):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.normal_(0.0, 0.02, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


@dataclass
class ModelState:
    """Paired generator/discriminator with the configs and seed that made them."""

    generator: UNetGenerator
    discriminator: PatchDiscriminator
    gen_cfg: GeneratorConfig
    disc_cfg: DiscriminatorConfig
    train_cfg: Optional["TrainConfig"] = None
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.gen_cfg.num_classes


def init_model_state(
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
    seed: int | None = None,
) -> ModelState:
    """Build freshly initialized generator/discriminator from the configs."""
    return ModelState(
        generator=UNetGenerator(gen_cfg),
        discriminator=PatchDiscriminator(disc_cfg, gen_cfg.num_classes),
        gen_cfg=gen_cfg,
        disc_cfg=disc_cfg,
        seed=gen_cfg.rng_seed if seed is None else seed,
    )


def _image_tensor(image: ImageSlice) -> torch.Tensor:
    return torch.from_numpy(image.pixels).unsqueeze(0).unsqueeze(0)


def generator_forward(state: ModelState, image: ImageSlice) -> ProbMap:
    """Run the generator on one slice; returns a normalized ProbMap."""
    state.generator.eval()
    with torch.no_grad():
        probs = state.generator(_image_tensor(image))[0]
    return ProbMap(image.id, probs.numpy())


def discriminator_forward(
    state: ModelState, image: ImageSlice, seg: ProbMap
) -> np.ndarray:
    """Patch score map (h', w') for an (image, segmentation) pair."""
    check_same_shape(image.pixels, np.asarray(seg.probs[0]), "image vs seg")
    state.discriminator.eval()
    with torch.no_grad():
        seg_t = torch.from_numpy(seg.probs).unsqueeze(0)
        scores = state.discriminator(_image_tensor(image), seg_t)[0, 0]
    return scores.numpy()


def _cfg_dict(cfg) -> dict:
    return dataclasses.asdict(cfg) if cfg is not None else None


def save_checkpoint(state: ModelState, path) -> Path:
    """Single-file checkpoint: magic line, JSON header line, raw float32 data.

    The header carries a version tag, config echoes, the seed, and the name,
    shape, and dtype of every parameter array, in serialization order; the
    binary section is the arrays' little-endian bytes concatenated in that
    same order.
    """
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = []
    for prefix, module in (("generator", state.generator),
                           ("discriminator", state.discriminator)):
        for name, tensor in module.state_dict().items():
            arrays.append((f"{prefix}/{name}", tensor.numpy().astype("<f4")))
    header = {
        "format": CHECKPOINT_MAGIC,
        "gen_cfg": _cfg_dict(state.gen_cfg),
        "disc_cfg": _cfg_dict(state.disc_cfg),
        "train_cfg": _train_cfg_dict(state.train_cfg),
        "seed": state.seed,
        "arrays": [
            {"name": n, "shape": list(a.shape), "dtype": "float32"}
            for n, a in arrays
        ],
    }
    with path.open("wb") as f:
        f.write((CHECKPOINT_MAGIC + "\n").encode())
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for _, a in arrays:
            f.write(a.tobytes())
    return path


def _train_cfg_dict(train_cfg) -> dict | None:
    if train_cfg is None:
        return None
    d = dataclasses.asdict(train_cfg)
    d["mode"] = train_cfg.mode.value
    return d


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    if not path.exists():
        raise IOError(f"no checkpoint at {path}")
    with path.open("rb") as f:
        magic = f.readline().decode().strip()
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a coseg checkpoint (magic {magic!r})")
        header = json.loads(f.readline().decode())
        blob = f.read()

    gen_cfg = GeneratorConfig(**header["gen_cfg"])
    disc_cfg = DiscriminatorConfig(**header["disc_cfg"])
    train_cfg = None
    if header.get("train_cfg") is not None:
        from .training import TrainConfig, TrainMode

        d = dict(header["train_cfg"])
        d["mode"] = TrainMode(d["mode"])
        d["loss_weights"] = LossWeights(**d["loss_weights"])
        train_cfg = TrainConfig(**d)

    state = init_model_state(gen_cfg, disc_cfg, seed=header["seed"])
    state.train_cfg = train_cfg

    offset = 0
    loaded: dict[str, dict[str, torch.Tensor]] = {"generator": {}, "discriminator": {}}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = n * 4
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated parameter data")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(
            spec["shape"]
        )
        offset += nbytes
        prefix, name = spec["name"].split("/", 1)
        loaded[prefix][name] = torch.from_numpy(arr.copy())
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    state.generator.load_state_dict(loaded["generator"])
    state.discriminator.load_state_dict(loaded["discriminator"])
    return state
