import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nerfgan.camera import Pose, pose_to_camera
from nerfgan.errors import ConfigurationError, EvaluationError
from nerfgan.rendering import RenderConfig, composite, render, stratified_sample


def constant_field(sigma, color):
    def field(points, directions):
        shape = points.shape[:-1]
        rgb = torch.tensor(color, dtype=points.dtype).expand(*shape, 3)
        return rgb, torch.full(shape, sigma, dtype=points.dtype)
    return field


def analytic_pixel(sigma, color, length):
    # closed form of the volume integral for a homogeneous slab
    return np.asarray(color) * (1.0 - math.exp(-sigma * length))


def test_constant_field_matches_analytic_integral(float64):
    rng = np.random.default_rng(7)
    cam = pose_to_camera(Pose(1.0, 0.4), 2.5, 0.5)
    for _ in range(20):
        sigma = rng.uniform(0.0, 5.0)
        color = rng.uniform(0.0, 1.0, size=3)
        cfg = RenderConfig((4, 4), 256, 1.5, 3.5, stratified=False)
        img = (render(constant_field(sigma, color), cam, cfg) + 1) / 2
        expected = analytic_pixel(sigma, color, cfg.far - cfg.near)
        assert np.abs(img.numpy() - expected).max() < 1e-3


def test_left_endpoint_depths_integrate_exactly(float64):
    sigma, color, near, far, n = 1.7, [0.2, 0.5, 0.9], 1.0, 3.0, 256
    depths = near + (far - near) / n * torch.arange(n, dtype=torch.float64)
    res = composite(torch.tensor(color).expand(n, 3), torch.full((n,), sigma), depths, far)
    np.testing.assert_allclose(res.pixel_color.numpy(), analytic_pixel(sigma, color, far - near), atol=1e-12)


def test_weight_sum_identity_on_random_rays(float64):
    rng = np.random.default_rng(3)
    n_rays, n = 1000, 24
    gaps = torch.from_numpy(rng.uniform(0.01, 0.2, size=(n_rays, n)))
    depths = 1.0 + torch.cumsum(gaps, dim=-1)
    far = float(depths.max()) + 0.1
    sigma = torch.from_numpy(rng.exponential(2.0, size=(n_rays, n)))
    colors = torch.from_numpy(rng.random((n_rays, n, 3)))
    res = composite(colors, sigma, depths, far)
    deltas = torch.diff(depths, dim=-1, append=torch.full((n_rays, 1), far))
    expected = 1.0 - torch.exp(-(sigma * deltas).sum(-1))
    assert (res.weights.sum(-1) - expected).abs().max() < 1e-6
    assert torch.allclose(res.opacity, expected, atol=1e-12)


def test_empty_field_shows_background(float64):
    n = 8
    depths = torch.linspace(1.0, 2.0, n)
    res = composite(torch.rand(n, 3), torch.zeros(n), depths, 2.5, background=0.25)
    np.testing.assert_allclose(res.pixel_color.numpy(), [0.25] * 3)


def test_opaque_first_sample_hides_the_rest(float64):
    n = 6
    colors = torch.zeros(n, 3)
    colors[0] = torch.tensor([0.1, 0.7, 0.3])
    colors[1:] = 1.0
    density = torch.zeros(n)
    density[0] = 1e4
    res = composite(colors, density, torch.linspace(1.0, 2.0, n), 2.5)
    np.testing.assert_allclose(res.pixel_color.numpy(), [0.1, 0.7, 0.3], atol=1e-9)


@pytest.mark.parametrize("depths", [[1.0, 1.0, 2.0], [1.0, 2.0, 3.0]])
def test_composite_rejects_bad_depths(depths):
    d = torch.tensor(depths)
    with pytest.raises(EvaluationError):
        composite(torch.zeros(3, 3), torch.ones(3), d, far=2.5)


def test_composite_rejects_negative_density():
    with pytest.raises(EvaluationError):
        composite(torch.zeros(2, 3), torch.tensor([1.0, -1.0]), torch.tensor([1.0, 2.0]), 3.0)


@settings(max_examples=50, deadline=None)
@given(near=st.floats(0.1, 2.0), span=st.floats(0.1, 3.0), n=st.integers(1, 40),
       seed=st.integers(0, 2 ** 16))
def test_stratified_depths_stay_in_their_bins(near, span, n, seed):
    far = near + span
    d = stratified_sample(near, far, n, True, np.random.default_rng(seed), shape=(5,), dtype=torch.float64)
    width = span / n
    lower = near + width * torch.arange(n, dtype=torch.float64)
    assert ((d >= lower - 1e-12) & (d <= lower + width + 1e-12)).all()
    assert (d < far).all()


def test_midpoint_sampling_is_deterministic():
    a = stratified_sample(1.0, 3.0, 4, False, dtype=torch.float64)
    np.testing.assert_allclose(a.numpy(), [1.25, 1.75, 2.25, 2.75])


def test_stratified_sampling_needs_rng():
    with pytest.raises(ConfigurationError):
        stratified_sample(1.0, 2.0, 4, True)


@pytest.mark.parametrize("kwargs", [dict(samples_per_ray=0), dict(near=3.0, far=2.0), dict(resolution=(0, 4))])
def test_render_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        RenderConfig(**kwargs).validate()


def test_render_shape_and_range():
    cam = pose_to_camera(torch.tensor([[1.0, 0.2], [1.2, 0.5]]), 2.5, 0.5)
    img = render(constant_field(2.0, [0.3, 0.6, 0.9]), cam, RenderConfig((5, 7), 8), np.random.default_rng(0))
    assert img.shape == (2, 5, 7, 3)
    assert img.min() >= -1 and img.max() <= 1


def test_stratified_render_reproducible_with_seed():
    cam = pose_to_camera(Pose(1.0, 0.2), 2.5, 0.5)

    def field(p, d):
        return torch.sigmoid(p), p.norm(dim=-1)

    cfg = RenderConfig((4, 4), 8)
    a = render(field, cam, cfg, np.random.default_rng(5))
    b = render(field, cam, cfg, np.random.default_rng(5))
    assert torch.equal(a, b)
