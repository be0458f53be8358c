"""Training objectives and the SSIM / perceptual image distances.

All objectives average over the leading batch dimension. Images are
(B, H, W, 3) tensors in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, EvaluationError
from .features import RandomConvFeatures

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    pos: float = 0.0
    ssim: float = 1.0
    vgg: float = 1.0
    recon: float = 5.0

    def validate(self) -> None:
        for name in ("pos", "ssim", "vgg", "recon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"lambda_{name} must be finite and >= 0, got {v}")


def _check_finite(*tensors: torch.Tensor) -> None:
    for t in tensors:
        if not bool(torch.isfinite(t).all()):
            raise EvaluationError("loss received non-finite input")


def pose_distance_sq(a: torch.Tensor, b: torch.Tensor, wraparound: bool = False) -> torch.Tensor:
    """Squared euclidean distance between (..., 2) poses, summed over coordinates.

    With ``wraparound`` the yaw difference is taken modulo 2*pi.
    """
    diff = a - b
    if wraparound:
        yaw = torch.remainder(diff[..., 1] + math.pi, 2 * math.pi) - math.pi
        diff = torch.stack([diff[..., 0], yaw], dim=-1)
    return (diff ** 2).sum(dim=-1)


def gan_generator_loss(l_gen, d_rand, d_gen, lambda_pos: float, wraparound: bool = False):
    _check_finite(l_gen, d_rand, d_gen)
    return (F.softplus(-l_gen) + lambda_pos * pose_distance_sq(d_rand, d_gen, wraparound)).mean()


def gan_discriminator_loss(l_real, l_gen, d_rand, d_gen, lambda_pos: float, wraparound: bool = False):
    _check_finite(l_real, l_gen, d_rand, d_gen)
    fake = F.softplus(l_gen) + lambda_pos * pose_distance_sq(d_rand, d_gen, wraparound)
    return F.softplus(-l_real).mean() + fake.mean()


def gan_inversion_loss(z_pred, z_rand, d_pred, d_rand, wraparound: bool = False):
    if z_pred.shape != z_rand.shape or d_pred.shape != d_rand.shape:
        raise ConfigurationError(
            f"shape mismatch: z {tuple(z_pred.shape)} vs {tuple(z_rand.shape)}, "
            f"pose {tuple(d_pred.shape)} vs {tuple(d_rand.shape)}")
    z_term = ((z_pred - z_rand) ** 2).sum(dim=-1)
    return (z_term + pose_distance_sq(d_pred, d_rand, wraparound)).mean()


def conditional_adversarial_loss(l_cond):
    return F.softplus(-l_cond).mean()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=None) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype or torch.get_default_dtype())


def ssim_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-pixel, per-channel SSIM of (B, H, W, 3) images in [-1, 1].

    Local statistics use an 11x11 Gaussian window (sigma 1.5) with replicate
    padding at the borders, on images remapped to [0, 1].
    """
    if a.shape != b.shape:
        raise ConfigurationError(f"SSIM needs equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    x = ((a + 1) / 2).permute(0, 3, 1, 2)
    y = ((b + 1) / 2).permute(0, 3, 1, 2)
    c = x.shape[1]
    win = gaussian_window(dtype=x.dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)
    pad = SSIM_WINDOW // 2

    def blur(t):
        return F.conv2d(F.pad(t, (pad,) * 4, mode="replicate"), win, groups=c)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return (num / den).permute(0, 2, 3, 1)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM over pixels, channels and batch. Accepts (H, W, 3) or (B, H, W, 3)."""
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    return ssim_map(a, b).mean()


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, feat: RandomConvFeatures) -> torch.Tensor:
    """Sum over layers of the mean squared feature difference."""
    if a.shape != b.shape:
        raise ConfigurationError(f"perceptual distance needs equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    total = a.new_zeros(())
    for fa, fb in zip(feat(a), feat(b)):
        total = total + ((fa - fb) ** 2).mean()
    return total


def reconstruction_loss(i_recon, i_real, weights: LossWeights, feat: RandomConvFeatures,
                        terms: dict | None = None):
    """MSE + lambda_ssim * (1 - SSIM) + lambda_vgg * perceptual distance.

    When ``terms`` is given, the three unweighted sub-terms are stored in it.
    """
    if i_recon.shape != i_real.shape:
        raise ConfigurationError(f"reconstruction needs equal shapes, got {tuple(i_recon.shape)} and {tuple(i_real.shape)}")
    mse = ((i_recon - i_real) ** 2).mean()
    loss = mse
    if terms is not None:
        terms["mse"] = float(mse.detach())
    if weights.ssim:
        l_ssim = 1.0 - ssim(i_recon, i_real)
        loss = loss + weights.ssim * l_ssim
        if terms is not None:
            terms["ssim"] = float(l_ssim.detach())
    if weights.vgg:
        l_vgg = perceptual_distance(i_recon, i_real, feat)
        loss = loss + weights.vgg * l_vgg
        if terms is not None:
            terms["vgg"] = float(l_vgg.detach())
    return loss
