"""Frozen random convolutional feature maps.

Stand-ins for VGG (perceptual loss) and Inception (FID/KID features): fixed,
seeded weights that are never trained. Each instance carries a ``tag`` that
is written into checkpoints and metric reports.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class RandomConvFeatures(nn.Module):
    """Stack of stride-2 3x3 convolutions with He-normal weights from ``seed``.

    ``forward`` returns the list of activations after every layer for
    (B, H, W, 3) images in [-1, 1].
    """

    def __init__(self, widths=(16, 32, 64), seed: int = 0):
        super().__init__()
        self.widths = tuple(widths)
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        chans = (3,) + self.widths
        for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
            std = math.sqrt(2.0 / (a * 9))
            w = torch.randn(b, a, 3, 3, generator=gen, dtype=torch.float64) * std
            self.register_buffer(f"weight{i}", w)
            self.register_buffer(f"bias{i}", torch.zeros(b, dtype=torch.float64))
        self.requires_grad_(False)

    @property
    def tag(self) -> str:
        return f"randconv-{'x'.join(map(str, self.widths))}-seed{self.seed}"

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = images.permute(0, 3, 1, 2)
        feats = []
        for i in range(len(self.widths)):
            w = getattr(self, f"weight{i}").to(x.dtype)
            b = getattr(self, f"bias{i}").to(x.dtype)
            x = F.leaky_relu(F.conv2d(x, w, b, stride=2, padding=1), 0.2)
            feats.append(x)
        return feats


class PooledFeatureExtractor(nn.Module):
    """Image -> fixed-length vector: random conv stack, then global mean pooling."""

    def __init__(self, widths=(16, 32, 64), seed: int = 1):
        super().__init__()
        self.convs = RandomConvFeatures(widths, seed)

    @property
    def tag(self) -> str:
        return "pooled-" + self.convs.tag

    @property
    def dim(self) -> int:
        return self.convs.widths[-1]

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.convs(images)[-1].mean(dim=(2, 3))
