"""Poses on a viewing sphere, pose priors, look-at cameras and pixel rays.

Axis convention: world-up is +z, pitch is the polar angle measured from +z
and yaw is the azimuth measured from +x towards +y. A camera at
(radius, pitch, yaw) sits at ``radius * (sin p cos y, sin p sin y, cos p)``
and looks at the origin. Camera space follows the OpenGL convention: x right,
y up, the camera looks down its own -z axis. Image row 0 is the top row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .errors import ConfigurationError

# Poses are kept this far away from the poles so the look-at frame stays defined.
POLE_EPS = 1e-4
TWO_PI = 2.0 * math.pi


class Pose(NamedTuple):
    pitch: float
    yaw: float


@dataclass(frozen=True)
class PosePrior:
    """Distribution of camera poses of the training images.

    ``kind`` is ``"gaussian"`` (diagonal covariance, e.g. faces) or
    ``"uniform-hemisphere"`` (area-uniform over the upper hemisphere).
    ``mean`` and ``stddev`` are only used by the gaussian kind.
    """

    kind: str = "gaussian"
    mean: Pose = Pose(math.pi / 2, math.pi / 2)
    stddev: tuple[float, float] = (0.15, 0.3)

    def validate(self) -> None:
        if self.kind == "gaussian":
            sp, sy = self.stddev
            if sp < 0 or sy < 0 or not (math.isfinite(sp) and math.isfinite(sy)):
                raise ConfigurationError(f"pose prior stddev must be finite and >= 0, got {self.stddev}")
            p, y = self.mean
            if not (0.0 < p < math.pi):
                raise ConfigurationError(f"pose prior mean pitch must lie in (0, pi), got {p}")
            if not (0.0 <= y < TWO_PI):
                raise ConfigurationError(f"pose prior mean yaw must lie in [0, 2pi), got {y}")
        elif self.kind != "uniform-hemisphere":
            raise ConfigurationError(f"unknown pose prior kind {self.kind!r}")

    @property
    def pitch_range(self) -> tuple[float, float]:
        if self.kind == "uniform-hemisphere":
            return POLE_EPS, math.pi / 2
        return POLE_EPS, math.pi - POLE_EPS

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` poses as an ``(n, 2)`` array of (pitch, yaw)."""
        self.validate()
        if self.kind == "uniform-hemisphere":
            # cos(pitch) ~ U[0, 1) gives equal probability per unit area
            u = rng.random(n)
            pitch = np.arccos(u)
            yaw = TWO_PI * rng.random(n)
        else:
            noise = rng.standard_normal((n, 2))
            pitch = self.mean[0] + self.stddev[0] * noise[:, 0]
            yaw = self.mean[1] + self.stddev[1] * noise[:, 1]
            lo, hi = self.pitch_range
            pitch = np.clip(pitch, lo, hi)
            yaw = np.clip(yaw, 0.0, np.nextafter(TWO_PI, 0.0))
        return np.stack([pitch, yaw], axis=-1)


def sample_pose(prior: PosePrior, rng: np.random.Generator) -> Pose:
    pitch, yaw = prior.sample(rng, 1)[0]
    return Pose(float(pitch), float(yaw))


@dataclass
class Camera:
    """Look-at pinhole camera. Tensors may carry leading batch dimensions."""

    position: torch.Tensor  # (..., 3)
    rotation: torch.Tensor  # (..., 3, 3), columns are camera x, y, z axes in world space
    fov: float
    radius: float


def _as_pose_tensor(pose, dtype=None) -> torch.Tensor:
    if isinstance(pose, torch.Tensor):
        return pose
    return torch.as_tensor(np.asarray(pose, dtype=np.float64), dtype=dtype or torch.get_default_dtype())


def pose_to_camera(pose, radius: float, fov: float) -> Camera:
    """Place a camera on the sphere of ``radius`` looking at the origin.

    Args:
        pose: a :class:`Pose`, or a tensor/array of shape (..., 2) holding
            (pitch, yaw). Differentiable when given a tensor.
        radius: distance from the origin.
        fov: full field of view across the image height, in radians.
    """
    if not radius > 0:
        raise ConfigurationError(f"camera radius must be > 0, got {radius}")
    if not 0 < fov < math.pi:
        raise ConfigurationError(f"fov must lie in (0, pi), got {fov}")
    pose_t = _as_pose_tensor(pose)
    pitch, yaw = pose_t[..., 0], pose_t[..., 1]
    folded = torch.remainder(pitch.detach().double(), math.pi)
    if bool((torch.minimum(folded, math.pi - folded) < 1e-6).any()):
        raise ConfigurationError("pitch at a pole (0 or pi) leaves the camera up-vector undefined")

    sp, cp = torch.sin(pitch), torch.cos(pitch)
    sy, cy = torch.sin(yaw), torch.cos(yaw)
    # unit vector from the origin to the camera; camera z axis points the same way
    back = torch.stack([sp * cy, sp * sy, cp], dim=-1)
    position = radius * back
    # d(back)/d(yaw), normalized: horizontal and perpendicular to the view axis
    right = torch.stack([-sy, cy, torch.zeros_like(yaw)], dim=-1)
    up = torch.cross(back, right, dim=-1)
    rotation = torch.stack([right, up, back], dim=-1)
    return Camera(position=position, rotation=rotation, fov=float(fov), radius=float(radius))


@dataclass
class RayBundle:
    origins: torch.Tensor  # (..., N, 3)
    directions: torch.Tensor  # (..., N, 3), unit norm
    pixel_index: torch.Tensor  # (N,), row-major index into the H x W frame


def camera_space_directions(resolution: tuple[int, int], fov: float, dtype=None) -> torch.Tensor:
    """Unnormalized pinhole directions through pixel centers, shape (H*W, 3)."""
    h, w = resolution
    if h < 1 or w < 1:
        raise ConfigurationError(f"resolution must be >= 1 in both axes, got {resolution}")
    dtype = dtype or torch.get_default_dtype()
    focal = 0.5 * h / math.tan(0.5 * fov)
    rows, cols = torch.meshgrid(
        torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij"
    )
    x = (cols + 0.5 - 0.5 * w) / focal
    y = -(rows + 0.5 - 0.5 * h) / focal
    z = -torch.ones_like(x)
    return torch.stack([x, y, z], dim=-1).reshape(h * w, 3)


def generate_rays(camera: Camera, resolution: tuple[int, int]) -> RayBundle:
    dirs_cam = camera_space_directions(resolution, camera.fov, dtype=camera.rotation.dtype)
    dirs_cam = dirs_cam / dirs_cam.norm(dim=-1, keepdim=True)
    # (..., 3, 3) @ (N, 3)^T -> (..., N, 3)
    directions = torch.einsum("...ij,nj->...ni", camera.rotation, dirs_cam)
    origins = camera.position.unsqueeze(-2).expand(directions.shape)
    h, w = resolution
    return RayBundle(origins=origins, directions=directions, pixel_index=torch.arange(h * w))
