"""Differentiable ray marching: depth sampling and alpha compositing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .camera import Camera, generate_rays
from .errors import ConfigurationError, EvaluationError

# field(points, directions) -> (colors in [0,1], densities >= 0)
Field = Callable[[torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]


@dataclass(frozen=True)
class RenderConfig:
    resolution: tuple[int, int] = (32, 32)
    samples_per_ray: int = 24
    near: float = 1.5
    far: float = 3.5
    stratified: bool = True
    background: float = 0.0  # gray level in [0, 1] color space

    def validate(self) -> None:
        h, w = self.resolution
        if h < 1 or w < 1:
            raise ConfigurationError(f"resolution must be positive, got {self.resolution}")
        if self.samples_per_ray < 1:
            raise ConfigurationError(f"samples_per_ray must be >= 1, got {self.samples_per_ray}")
        if not self.near < self.far:
            raise ConfigurationError(f"near ({self.near}) must be < far ({self.far})")


@dataclass
class CompositeResult:
    pixel_color: torch.Tensor  # (..., 3)
    weights: torch.Tensor  # (..., n)
    opacity: torch.Tensor  # (...)


def stratified_sample(near: float, far: float, n: int, stratified: bool = False,
                      rng: np.random.Generator | None = None, shape: tuple[int, ...] = (),
                      dtype=None) -> torch.Tensor:
    """Depths along a ray, one per equal-width bin of [near, far].

    With ``stratified`` each depth is a uniform draw inside its bin, otherwise
    the bin midpoint. Returns a tensor of shape ``shape + (n,)``.
    """
    if not near < far:
        raise ConfigurationError(f"near ({near}) must be < far ({far})")
    if n < 1:
        raise ConfigurationError(f"need at least one sample per ray, got {n}")
    dtype = dtype or torch.get_default_dtype()
    width = (far - near) / n
    lower = near + width * torch.arange(n, dtype=dtype)
    if stratified:
        if rng is None:
            raise ConfigurationError("stratified sampling needs an rng")
        u = torch.from_numpy(rng.random(tuple(shape) + (n,))).to(dtype)
    else:
        u = torch.full(tuple(shape) + (n,), 0.5, dtype=dtype)
    return lower + width * u


def composite(colors: torch.Tensor, densities: torch.Tensor, depths: torch.Tensor,
              far: float, background: float = 0.0, check: bool = True) -> CompositeResult:
    """Alpha-composite samples front to back.

    ``delta_i = depth_{i+1} - depth_i`` and the last interval runs to ``far``;
    ``alpha_i = 1 - exp(-sigma_i delta_i)``, ``T_i = prod_{j<i} (1 - alpha_j)``.

    Args:
        colors: (..., n, 3) in [0, 1].
        densities: (..., n), non-negative.
        depths: (..., n), strictly increasing along the last axis, all < far.
    """
    if check:
        if bool((depths[..., 1:] <= depths[..., :-1]).any()) or bool((depths[..., -1] >= far).any()):
            raise EvaluationError("sample depths must be strictly increasing and below far")
        if bool((densities < 0).any()):
            raise EvaluationError("densities must be non-negative")
    far_t = torch.full_like(depths[..., :1], far)
    deltas = torch.diff(depths, dim=-1, append=far_t)
    optical = densities * deltas
    alpha = 1.0 - torch.exp(-optical)
    # transmittance via cumulative optical depth; exact and stable for opaque samples
    accum = torch.cumsum(optical, dim=-1)
    transmittance = torch.exp(-torch.cat([torch.zeros_like(accum[..., :1]), accum[..., :-1]], dim=-1))
    weights = transmittance * alpha
    opacity = 1.0 - torch.exp(-accum[..., -1])
    pixel = (weights.unsqueeze(-1) * colors).sum(dim=-2) + (1.0 - opacity).unsqueeze(-1) * background
    return CompositeResult(pixel_color=pixel, weights=weights, opacity=opacity)


def render(field: Field, camera: Camera, cfg: RenderConfig,
           rng: np.random.Generator | None = None) -> torch.Tensor:
    """Render a full frame through ``field``; returns (..., H, W, 3) in [-1, 1]."""
    cfg.validate()
    rays = generate_rays(camera, cfg.resolution)
    batch_shape = rays.origins.shape[:-1]  # (..., N)
    depths = stratified_sample(cfg.near, cfg.far, cfg.samples_per_ray, cfg.stratified, rng,
                               shape=tuple(batch_shape), dtype=rays.origins.dtype)
    points = rays.origins.unsqueeze(-2) + depths.unsqueeze(-1) * rays.directions.unsqueeze(-2)
    view_dirs = rays.directions.unsqueeze(-2).expand(points.shape)
    colors, densities = field(points, view_dirs)
    result = composite(colors, densities, depths, cfg.far, cfg.background, check=False)
    h, w = cfg.resolution
    image = result.pixel_color.reshape(*batch_shape[:-1], h, w, 3)
    return image * 2.0 - 1.0
