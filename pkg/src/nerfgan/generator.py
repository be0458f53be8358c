"""Radiance-field generator: latent code -> FiLM parameters -> sinusoidal field -> image."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .camera import pose_to_camera
from .errors import ConfigurationError, EvaluationError
from .rendering import RenderConfig, render


@dataclass(frozen=True)
class GeneratorArch:
    z_dim: int = 16
    mapping_layers: int = 3
    mapping_width: int = 256
    field_layers: int = 4
    field_width: int = 64
    omega0: float = 30.0


@dataclass
class FilmParams:
    """Per-layer frequencies and phase shifts, each of shape (B, n_film, width).

    Layer ``i < field_layers`` modulates the density trunk; the last entry
    modulates the view-dependent color layer.
    """

    gammas: torch.Tensor
    betas: torch.Tensor


class MappingNetwork(nn.Module):
    """LeakyReLU MLP from the latent code to FiLM frequencies and phases."""

    def __init__(self, z_dim: int, n_film: int, film_width: int, hidden: int = 256,
                 layers: int = 3, omega0: float = 30.0):
        super().__init__()
        self.z_dim = z_dim
        self.n_film = n_film
        self.film_width = film_width
        self.omega0 = omega0
        dims = [z_dim] + [hidden] * layers
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(dims[-1], 2 * n_film * film_width)
        for layer in self.hidden:
            nn.init.kaiming_normal_(layer.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu")
        nn.init.kaiming_normal_(self.out.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu")
        with torch.no_grad():
            self.out.weight.mul_(0.25)

    def forward(self, z: torch.Tensor) -> FilmParams:
        if z.shape[-1] != self.z_dim:
            raise ConfigurationError(f"latent code has {z.shape[-1]} dims, mapping network expects {self.z_dim}")
        h = z
        for layer in self.hidden:
            h = F.leaky_relu(layer(h), 0.2)
        raw = self.out(h).reshape(*z.shape[:-1], 2, self.n_film, self.film_width)
        # frequencies centred on omega0, as in pi-GAN's mapping head
        gammas = self.omega0 + 0.5 * self.omega0 * raw[..., 0, :, :]
        betas = raw[..., 1, :, :]
        return FilmParams(gammas=gammas, betas=betas)


def _siren_init(layer: nn.Linear, first: bool, omega0: float) -> None:
    fan_in = layer.in_features
    bound = 1.0 / fan_in if first else math.sqrt(6.0 / fan_in) / omega0
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound)


class FilmSiren(nn.Module):
    """Sinusoidal field; every hidden layer computes ``sin(gamma * (W x + b) + beta)``.

    Density depends on position only; color additionally sees the ray direction.
    """

    def __init__(self, layers: int = 4, width: int = 64, omega0: float = 30.0):
        super().__init__()
        self.width = width
        dims = [3] + [width] * layers
        self.trunk = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.density_head = nn.Linear(width, 1)
        self.color_layer = nn.Linear(width + 3, width)
        self.color_head = nn.Linear(width, 3)
        for i, layer in enumerate(self.trunk):
            _siren_init(layer, first=(i == 0), omega0=omega0)
        for layer in (self.density_head, self.color_layer, self.color_head):
            _siren_init(layer, first=False, omega0=omega0)

    @property
    def n_film(self) -> int:
        return len(self.trunk) + 1

    def forward(self, points: torch.Tensor, directions: torch.Tensor, film: FilmParams):
        """Evaluate color and density.

        ``points`` and ``directions`` are (B, ..., 3); ``film`` tensors are
        (B, n_film, width) and broadcast over the middle dimensions.
        """
        extra = points.dim() - film.gammas.dim() + 1
        shape = film.gammas.shape[:-2] + (1,) * extra + film.gammas.shape[-1:]

        def modulation(i):
            return film.gammas[..., i, :].reshape(shape), film.betas[..., i, :].reshape(shape)

        h = points
        for i, layer in enumerate(self.trunk):
            g, b = modulation(i)
            h = torch.sin(g * layer(h) + b)
        density = F.softplus(self.density_head(h)).squeeze(-1)
        g, b = modulation(len(self.trunk))
        c = torch.sin(g * self.color_layer(torch.cat([h, directions], dim=-1)) + b)
        color = torch.sigmoid(self.color_head(c))
        return color, density


class Generator(nn.Module):
    """G: (z, pose) -> image, composing the mapping network, field and renderer."""

    def __init__(self, arch: GeneratorArch = GeneratorArch(), radius: float = 2.5, fov: float = 0.5):
        super().__init__()
        self.arch = arch
        self.radius = radius
        self.fov = fov
        self.field = FilmSiren(arch.field_layers, arch.field_width, arch.omega0)
        self.mapping = MappingNetwork(arch.z_dim, self.field.n_film, arch.field_width,
                                      arch.mapping_width, arch.mapping_layers, arch.omega0)

    @property
    def z_dim(self) -> int:
        return self.arch.z_dim

    def field_query(self, film: FilmParams):
        def query(points, directions):
            return self.field(points, directions, film)
        return query

    def forward(self, z: torch.Tensor, pose: torch.Tensor, cfg: RenderConfig,
                rng: np.random.Generator | None = None) -> torch.Tensor:
        """Render (B, H, W, 3) images in [-1, 1] for codes (B, z_dim) and poses (B, 2)."""
        film = self.mapping(z)
        camera = pose_to_camera(pose, self.radius, self.fov)
        return render(self.field_query(film), camera, cfg, rng)


def field_forward(point: torch.Tensor, film: FilmParams, field: FilmSiren,
                  direction: torch.Tensor | None = None):
    """Color and density of a single field at ``point`` (shape (..., 3)).

    ``film`` holds one modulation set (n_film, width). When no direction is
    given the color is evaluated for a ray looking down -z.
    """
    if not bool(torch.isfinite(point).all()):
        raise EvaluationError("field evaluated at a non-finite point")
    if direction is None:
        direction = torch.zeros_like(point)
        direction[..., 2] = -1.0
    if film.gammas.shape[-2:] != (field.n_film, field.width):
        raise ConfigurationError(
            f"FiLM parameters of shape {tuple(film.gammas.shape[-2:])} do not match the field "
            f"({field.n_film}, {field.width})")
    return field(point, direction, film)


def generate_image(z, pose, render_cfg: RenderConfig, generator: Generator,
                   rng: np.random.Generator | None = None) -> torch.Tensor:
    """Single-image convenience wrapper: z (z_dim,), pose (2,) -> (H, W, 3)."""
    dtype = next(generator.parameters()).dtype
    z = torch.as_tensor(z, dtype=dtype)
    pose = torch.as_tensor(np.asarray(pose, dtype=np.float64), dtype=dtype) if not isinstance(pose, torch.Tensor) else pose
    return generator(z.unsqueeze(0), pose.unsqueeze(0), render_cfg, rng)[0]
