"""Convolutional image networks: the discriminator D and the encoder E.

Both share one backbone design (strided conv blocks, LeakyReLU) but never
share weights. Inputs are (B, H, W, 3) images in [-1, 1]; inputs larger
than the base resolution are average-pooled down by powers of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


@dataclass(frozen=True)
class ConvArch:
    base_resolution: int = 32
    widths: tuple[int, ...] = (32, 64, 128, 128)


class DiscriminatorOutput(NamedTuple):
    logit: torch.Tensor  # (B,)
    pose: torch.Tensor  # (B, 2), unclamped


class EncoderOutput(NamedTuple):
    z: torch.Tensor  # (B, z_dim), in (-1, 1)
    pose: torch.Tensor  # (B, 2)


class ConvBackbone(nn.Module):
    def __init__(self, arch: ConvArch):
        super().__init__()
        self.arch = arch
        n = len(arch.widths)
        final = arch.base_resolution // 2 ** n
        if final < 1 or arch.base_resolution % 2 ** n:
            raise ConfigurationError(
                f"base resolution {arch.base_resolution} cannot be halved {n} times")
        chans = (3,) + tuple(arch.widths)
        self.blocks = nn.ModuleList(
            nn.Conv2d(a, b, kernel_size=3, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:]))
        self.out_features = chans[-1] * final * final

    def to_base(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) -> (B, 3, base, base), pooling larger stage resolutions down."""
        if images.dim() != 4 or images.shape[-1] != 3 or images.shape[1] != images.shape[2]:
            raise ConfigurationError(f"expected square (B, H, W, 3) images, got {tuple(images.shape)}")
        res = images.shape[1]
        base = self.arch.base_resolution
        factor = res // base
        if res % base or factor & (factor - 1):
            raise ConfigurationError(
                f"image resolution {res} is not the base resolution {base} times a power of two")
        x = images.permute(0, 3, 1, 2)
        if factor > 1:
            x = F.avg_pool2d(x, factor)
        return x

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.to_base(images)
        for conv in self.blocks:
            x = F.leaky_relu(conv(x), 0.2)
        return x.flatten(1)


class Discriminator(nn.Module):
    """D: image -> (realness logit, pose estimate)."""

    def __init__(self, arch: ConvArch = ConvArch()):
        super().__init__()
        self.backbone = ConvBackbone(arch)
        self.logit_head = nn.Linear(self.backbone.out_features, 1)
        self.pose_head = nn.Linear(self.backbone.out_features, 2)

    def forward(self, images: torch.Tensor) -> DiscriminatorOutput:
        h = self.backbone(images)
        return DiscriminatorOutput(self.logit_head(h).squeeze(-1), self.pose_head(h))


class Encoder(nn.Module):
    """E: image -> (latent code, pose).

    The latent head ends in tanh so codes stay inside the prior's support.
    ``pose_box`` bounds the pose head with a sigmoid into
    ``[lo, hi]`` per coordinate (used for hemisphere priors); ``None`` leaves
    it linear.
    """

    def __init__(self, z_dim: int, arch: ConvArch = ConvArch(),
                 pose_box: tuple[tuple[float, float], tuple[float, float]] | None = None):
        super().__init__()
        self.z_dim = z_dim
        self.backbone = ConvBackbone(arch)
        self.z_head = nn.Linear(self.backbone.out_features, z_dim)
        self.pose_head = nn.Linear(self.backbone.out_features, 2)
        self.pose_box = pose_box

    def forward(self, images: torch.Tensor) -> EncoderOutput:
        h = self.backbone(images)
        z = torch.tanh(self.z_head(h))
        pose = self.pose_head(h)
        if self.pose_box is not None:
            lo = pose.new_tensor([b[0] for b in self.pose_box])
            hi = pose.new_tensor([b[1] for b in self.pose_box])
            pose = lo + (hi - lo) * torch.sigmoid(pose)
        return EncoderOutput(z, pose)


def encode(images: torch.Tensor, encoder: Encoder) -> EncoderOutput:
    return encoder(images)


def discriminate(images: torch.Tensor, discriminator: Discriminator) -> DiscriminatorOutput:
    return discriminator(images)


def hemisphere_pose_box(eps: float = 1e-3):
    return ((eps, math.pi / 2), (0.0, 2 * math.pi))
