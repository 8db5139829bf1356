"""Four-stage EfficientViT-style classifier with a P2/P3/P4 fusion head."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from augsweep.nn.layers import ConvNormAct, EfficientViTBlock, MBConv


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    stage_channels: tuple = (16, 32, 64, 128)
    stage_depths: tuple = (1, 1, 2, 2)
    attention_dim: int = 16
    attention_heads: int = 4
    multiscale_kernel: int = 5
    num_classes: int = 10
    stem_channels: int = 16
    stem_stride: int = 2
    expand_ratio: float = 4.0
    head_width: int = 64
    activation: str = "hardswish"

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ValueError("need exactly 4 stage channel counts and depths")
        if min(self.stage_channels) < 1 or min(self.stage_depths) < 1:
            raise ValueError("stage channels and depths must be positive")
        if any(c % self.attention_heads for c in self.stage_channels):
            raise ValueError("stage channels must be divisible by attention_heads")
        if self.multiscale_kernel < 1 or self.multiscale_kernel % 2 == 0:
            raise ValueError("multiscale_kernel must be odd")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.stem_stride not in (1, 2):
            raise ValueError("stem_stride must be 1 or 2")
        if self.input_size < 16:
            raise ValueError("input_size must be at least 16")

    def stage_sizes(self) -> list[int]:
        size = math.ceil(self.input_size / self.stem_stride)
        out = []
        for _ in range(4):
            size = math.ceil(size / 2)
            out.append(size)
        return out

    def stage_kernel(self, stage: int) -> int:
        """Multi-scale kernel for a stage, capped at the largest odd size fitting its map."""
        size = self.stage_sizes()[stage]
        fit = size if size % 2 else size - 1
        return max(1, min(self.multiscale_kernel, fit))

    def to_text(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


class EfficientViTClassifier(nn.Module):
    """Stem, four downsampling stages (attention in stages 3 and 4), fused head.

    Each stage opens with a stride-2 MBConv followed by ``depth - 1`` blocks:
    MBConvs in stages 1-2, EfficientViT blocks in stages 3-4. The head aligns
    P2, P3, P4 with 1x1 convs, upsamples P3/P4 bilinearly to P2, adds, pools
    and classifies.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        act = cfg.activation
        self.stem = ConvNormAct(3, cfg.stem_channels, 3, cfg.stem_stride, act=act)
        stages = []
        c_prev = cfg.stem_channels
        for i, (c, depth) in enumerate(zip(cfg.stage_channels, cfg.stage_depths)):
            blocks = [MBConv(c_prev, c, 2, cfg.expand_ratio, act)]
            for _ in range(depth - 1):
                if i >= 2:
                    blocks.append(
                        EfficientViTBlock(
                            c, cfg.attention_heads, cfg.attention_dim, cfg.stage_kernel(i),
                            cfg.expand_ratio, act,
                        )
                    )
                else:
                    blocks.append(MBConv(c, c, 1, cfg.expand_ratio, act))
            stages.append(nn.Sequential(*blocks))
            c_prev = c
        self.stages = nn.ModuleList(stages)
        self.lateral = nn.ModuleList(
            ConvNormAct(c, cfg.head_width, 1, act="none") for c in cfg.stage_channels[1:]
        )
        self.head_act = nn.Hardswish() if act == "hardswish" else nn.GELU()
        self.classifier = nn.Linear(cfg.head_width, cfg.num_classes)
        self.initialized = False

    def initialize(self, seed: int = 0) -> "EfficientViTClassifier":
        """Seeded uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, (nn.Conv2d, nn.Linear)):
                    w = mod.weight
                    fan_in = w[0].numel()
                    bound = 1.0 / math.sqrt(fan_in)
                    w.copy_(torch.rand(w.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
                    if mod.bias is not None:
                        b = mod.bias
                        b.copy_(torch.rand(b.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
                elif isinstance(mod, nn.BatchNorm2d):
                    mod.reset_parameters()
        self.initialized = True
        return self

    def features(self, x):
        """Outputs of stages 1-4 (P1..P4)."""
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
            raise ValueError(
                f"expected (B, 3, {cfg.input_size}, {cfg.input_size}) input, got {tuple(x.shape)}"
            )
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def head(self, p2, p3, p4):
        size = p2.shape[-2:]
        fused = self.lateral[0](p2)
        for lat, p in ((self.lateral[1], p3), (self.lateral[2], p4)):
            fused = fused + F.interpolate(lat(p), size=size, mode="bilinear", align_corners=False)
        pooled = self.head_act(fused).mean(dim=(2, 3))
        return self.classifier(pooled)

    def forward(self, x):
        _, p2, p3, p4 = self.features(x)
        return self.head(p2, p3, p4)


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=torch.float32) -> EfficientViTClassifier:
    return EfficientViTClassifier(cfg).initialize(seed).to(dtype)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
