import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import directional_errors
from nerfgan.errors import ConfigurationError, EvaluationError
from nerfgan.features import RandomConvFeatures
from nerfgan.losses import (LossWeights, conditional_adversarial_loss, gan_discriminator_loss,
                            gan_generator_loss, gan_inversion_loss, perceptual_distance,
                            pose_distance_sq, reconstruction_loss, ssim)

LN2 = math.log(2.0)
FEAT = RandomConvFeatures((8, 16), seed=0)


def t(*values):
    return torch.tensor(values, dtype=torch.float64)


def poses(*pairs):
    return torch.tensor(pairs, dtype=torch.float64)


# ---- adversarial objectives --------------------------------------------------

def test_generator_loss_at_zero_logit():
    d = poses([1.0, 0.5])
    assert abs(gan_generator_loss(t(0.0), d, d, 15.0).item() - LN2) < 1e-9


def test_generator_loss_pose_term_arithmetic():
    d_rand = poses([1.0, 0.5])
    d_gen = poses([1.0, 0.5 + math.sqrt(0.1)])
    assert abs(gan_generator_loss(t(0.0), d_rand, d_gen, 15.0).item() - (LN2 + 1.5)) < 1e-9


def test_generator_loss_large_logit_leaves_pose_term():
    d_rand, d_gen = poses([1.0, 0.5]), poses([1.2, 0.5])
    loss = gan_generator_loss(t(60.0), d_rand, d_gen, 2.0).item()
    assert abs(loss - 2.0 * 0.04) < 1e-12


def test_discriminator_loss_at_zero_logits():
    d = poses([1.0, 0.5])
    assert abs(gan_discriminator_loss(t(0.0), t(0.0), d, d, 3.0).item() - 2 * LN2) < 1e-9


def test_perfect_discriminator_limit():
    d = poses([1.0, 0.5])
    assert gan_discriminator_loss(t(80.0), t(-80.0), d, d, 3.0).item() < 1e-30


def test_discriminator_gradient_on_fake_logit_is_half():
    l_gen = t(0.0).requires_grad_(True)
    d = poses([1.0, 0.5])
    gan_discriminator_loss(t(1.0), l_gen, d, d, 0.0).backward()
    assert abs(l_gen.grad.item() - 0.5) < 1e-12


def test_inversion_loss_zero_and_arithmetic():
    z = torch.linspace(-1, 1, 256, dtype=torch.float64).unsqueeze(0)
    d = poses([1.0, 0.5])
    assert gan_inversion_loss(z, z.clone(), d, d.clone()).item() == 0.0
    z2 = z.clone()
    z2[0, 17] += 0.1
    assert abs(gan_inversion_loss(z2, z, d, d).item() - 0.01) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_inversion_loss_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(3, 5, generator=g), torch.randn(3, 5, generator=g)
    p, q = torch.randn(3, 2, generator=g), torch.randn(3, 2, generator=g)
    assert torch.allclose(gan_inversion_loss(a, b, p, q), gan_inversion_loss(b, a, q, p))


def test_inversion_loss_shape_mismatch():
    with pytest.raises(ConfigurationError):
        gan_inversion_loss(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(2, 2), torch.zeros(2, 2))


def test_conditional_loss_values_and_monotonicity():
    assert abs(conditional_adversarial_loss(t(0.0)).item() - LN2) < 1e-12
    assert abs(conditional_adversarial_loss(t(10.0)).item() - math.log1p(math.exp(-10))) < 1e-15
    grid = torch.linspace(-5, 5, 101, dtype=torch.float64)
    values = torch.stack([conditional_adversarial_loss(v.reshape(1)) for v in grid])
    assert (values[1:] < values[:-1]).all() and (values > 0).all()


def test_saddle_lower_bound():
    d = poses([1.0, 0.5])
    for logit in np.linspace(-4, 4, 17):
        total = gan_generator_loss(t(logit), d, d, 1.0) + gan_discriminator_loss(t(logit), t(logit), d, d, 1.0)
        assert total.item() >= 2 * LN2 - 1e-12


def test_non_finite_logits_rejected():
    d = poses([1.0, 0.5])
    with pytest.raises(EvaluationError):
        gan_generator_loss(t(float("nan")), d, d, 0.0)


def test_pose_wraparound():
    a, b = poses([1.0, 0.05]), poses([1.0, 2 * math.pi - 0.05])
    assert abs(pose_distance_sq(a, b, wraparound=True).item() - 0.01) < 1e-12
    assert pose_distance_sq(a, b).item() > 30


def test_losses_are_batch_permutation_invariant():
    g = torch.Generator().manual_seed(1)
    logits, d1, d2 = torch.randn(6, generator=g), torch.randn(6, 2, generator=g), torch.randn(6, 2, generator=g)
    perm = torch.randperm(6, generator=g)
    assert torch.allclose(gan_generator_loss(logits, d1, d2, 2.0), gan_generator_loss(logits[perm], d1[perm], d2[perm], 2.0))
    img_a, img_b = torch.rand(6, 8, 8, 3, generator=g) * 2 - 1, torch.rand(6, 8, 8, 3, generator=g) * 2 - 1
    w = LossWeights()
    assert torch.allclose(reconstruction_loss(img_a, img_b, w, FEAT), reconstruction_loss(img_a[perm], img_b[perm], w, FEAT))


@pytest.mark.parametrize("field", ["pos", "ssim", "vgg", "recon"])
def test_negative_weights_rejected(field):
    with pytest.raises(ConfigurationError):
        LossWeights(**{field: -1.0}).validate()


# ---- SSIM ------------------------------------------------------------------------

def ssim_oracle(a, b):
    """Direct per-pixel evaluation of the two-constant SSIM formula.

    Windows are 11x11 Gaussians (sigma 1.5) with edge pixels replicated
    outside the image; inputs in [-1, 1] are mapped to [0, 1].
    """
    a = (np.asarray(a, dtype=np.float64) + 1) / 2
    b = (np.asarray(b, dtype=np.float64) + 1) / 2
    h, w, c = a.shape
    r = 5
    g1 = np.exp(-np.arange(-r, r + 1) ** 2 / (2 * 1.5 ** 2))
    g1 /= g1.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    total = 0.0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                mx = my = sxx = syy = sxy = 0.0
                for di in range(-r, r + 1):
                    for dj in range(-r, r + 1):
                        ii = min(max(i + di, 0), h - 1)
                        jj = min(max(j + dj, 0), w - 1)
                        wt = g1[di + r] * g1[dj + r]
                        x, y = a[ii, jj, ch], b[ii, jj, ch]
                        mx += wt * x
                        my += wt * y
                        sxx += wt * x * x
                        syy += wt * y * y
                        sxy += wt * x * y
                vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
                total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return total / (h * w * c)


def test_ssim_of_identical_images_is_one():
    a = torch.rand(2, 8, 8, 3, dtype=torch.float64) * 2 - 1
    assert abs(ssim(a, a).item() - 1.0) < 1e-12


def test_ssim_constant_images_match_oracle():
    a = torch.full((8, 8, 3), 0.5, dtype=torch.float64)
    b = a + 0.1
    assert abs(ssim(a, b).item() - ssim_oracle(a, b)) < 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_random_images_match_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (8, 8, 3))
    b = np.clip(a + rng.normal(0, 0.3, a.shape), -1, 1)
    got = ssim(torch.from_numpy(a), torch.from_numpy(b)).item()
    assert abs(got - ssim_oracle(a, b)) < 1e-6


def test_ssim_symmetric_over_random_pairs():
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        a = torch.rand(8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1
        b = torch.rand(8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1
        assert abs(ssim(a, b).item() - ssim(b, a).item()) < 1e-12


def test_ssim_shape_mismatch():
    with pytest.raises(ConfigurationError):
        ssim(torch.zeros(4, 4, 3), torch.zeros(4, 5, 3))


# ---- perceptual and reconstruction ------------------------------------------------

def test_perceptual_distance_zero_and_nonnegative():
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        a = torch.rand(8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1
        b = torch.rand(8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1
        assert perceptual_distance(a, b, FEAT).item() >= 0
    assert perceptual_distance(a, a, FEAT).item() == 0.0


def test_perceptual_distance_shrinks_with_perturbation():
    g = torch.Generator().manual_seed(3)
    a = torch.rand(1, 16, 16, 3, generator=g, dtype=torch.float64) * 2 - 1
    noise = torch.randn(a.shape, generator=g, dtype=torch.float64)
    values = [perceptual_distance(a, a + eps * noise, FEAT).item() for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)]
    assert all(x > y for x, y in zip(values, values[1:]))
    assert values[-1] < 1e-8


def test_reconstruction_zero_on_identical_images():
    a = torch.rand(3, 8, 8, 3, dtype=torch.float64) * 2 - 1
    assert abs(reconstruction_loss(a, a.clone(), LossWeights(), FEAT).item()) < 1e-9


def test_reconstruction_reduces_to_mse_without_extra_terms():
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(2, 8, 8, 3, generator=g), torch.rand(2, 8, 8, 3, generator=g)
    loss = reconstruction_loss(a, b, LossWeights(ssim=0.0, vgg=0.0), FEAT)
    assert torch.allclose(loss, ((a - b) ** 2).mean())


def test_reconstruction_reports_unweighted_terms():
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(2, 8, 8, 3, generator=g), torch.rand(2, 8, 8, 3, generator=g)
    terms = {}
    loss = reconstruction_loss(a, b, LossWeights(ssim=2.0, vgg=3.0), FEAT, terms)
    assert set(terms) == {"mse", "ssim", "vgg"}
    assert abs(loss.item() - (terms["mse"] + 2 * terms["ssim"] + 3 * terms["vgg"])) < 1e-5


def test_reconstruction_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(0)
    recon = (torch.rand(1, 8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    real = torch.rand(1, 8, 8, 3, generator=g, dtype=torch.float64) * 2 - 1

    def loss():
        return reconstruction_loss(recon, real, LossWeights(), FEAT)

    errors = directional_errors(loss, [("recon", recon)])
    assert errors["recon"] < 1e-4
