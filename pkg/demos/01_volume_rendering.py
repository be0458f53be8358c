"""
Volume rendering a radiance field
=================================

A camera on a sphere looks at the origin; rays are marched through a field
and composited front to back. A uniform fog has a closed-form answer, so it
doubles as a check on the compositor.
"""

import math

import torch

from nerfgan.camera import Pose, generate_rays, pose_to_camera
from nerfgan.rendering import RenderConfig, composite, render, stratified_sample

torch.set_default_dtype(torch.float64)

# A camera at pitch 1.1 (polar angle from +z) and yaw pi/4, 2.5 units out.
camera = pose_to_camera(Pose(1.1, math.pi / 4), radius=2.5, fov=0.5)
rays = generate_rays(camera, (4, 4))
print("ray origins", tuple(rays.origins.shape), "unit directions:",
      bool(torch.allclose(rays.directions.norm(dim=-1), torch.ones(16))))

# Uniform fog of density sigma and color c over a segment of length L
# composites to c * (1 - exp(-sigma * L)).
sigma, color, near, far = 0.8, 0.6, 1.5, 3.5
depths = stratified_sample(near, far, 256)
result = composite(torch.full((256, 3), color), torch.full((256,), sigma), depths, far)
exact = color * (1 - math.exp(-sigma * (far - near)))
print(f"composited {result.pixel_color[0].item():.6f} vs exact {exact:.6f}")

# The weights always sum to the ray's total opacity.
print("weights sum", result.weights.sum().item(), "opacity", result.opacity.item())


# Any callable (points, directions) -> (colors, densities) can be rendered.
# Here: a solid ball of radius 0.7 colored by position.
def ball(points, directions):
    inside = (points.norm(dim=-1) < 0.7).to(points.dtype)
    return (points * 0.5 + 0.5).clamp(0, 1), 40.0 * inside


image = render(ball, camera, RenderConfig((24, 24), 64, near, far, stratified=False))
print("image", tuple(image.shape), "range", image.min().item(), image.max().item())
