"""Single-image novel views, unconditional samples, interpolation and latent refinement.

All procedures treat the loaded networks as read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .camera import Pose, PosePrior
from .data import sample_latent
from .errors import ConfigurationError
from .losses import LossWeights, reconstruction_loss
from .metrics import render_batches
from .rendering import RenderConfig

DEFAULT_REFINE_STEP = 5e-3


@dataclass
class ViewRequest:
    poses: list[Pose]
    render_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.poses:
            raise ConfigurationError("a view request needs at least one pose")


def parse_poses(text: str, prior: PosePrior | None = None) -> list[Pose]:
    """``"p1,y1,p2,y2,..."`` or ``"p1,y1;p2,y2"`` or ``"turntable:k"``.

    A turntable gives ``k`` equally spaced yaws at the prior's mean pitch.
    """
    text = text.strip()
    if text.startswith("turntable:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad turntable count in {text!r}") from None
        if k < 1:
            raise ConfigurationError("turntable needs k >= 1")
        pitch = (prior or PosePrior()).mean[0]
        return [Pose(pitch, 2 * math.pi * i / k) for i in range(k)]
    try:
        values = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse pose list {text!r}") from None
    if not values or len(values) % 2:
        raise ConfigurationError(f"pose list needs pitch,yaw pairs, got {len(values)} numbers")
    return [Pose(values[i], values[i + 1]) for i in range(0, len(values), 2)]


def _render_cfg(state, overrides: dict | None = None) -> RenderConfig:
    cfg = state.config
    values = dict(resolution=None, samples_per_ray=None, stratified=False)
    values.update(overrides or {})
    return cfg.render_config(values["resolution"], values["samples_per_ray"], values["stratified"])


def _prepare(state, image: torch.Tensor) -> torch.Tensor:
    from .training import resize_images
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return resize_images(image.to(state.dtype), state.config.resolution)


@torch.no_grad()
def encode_image(state, image: torch.Tensor):
    """(z, pose) of one (H, W, 3) image, each without the batch axis."""
    enc = state.encoder(_prepare(state, image))
    return enc.z[0], enc.pose[0]


@torch.no_grad()
def reconstruct(state, images: torch.Tensor, render_cfg: RenderConfig | None = None) -> torch.Tensor:
    """G(E(I).z, E(I).pose) for a (B, H, W, 3) batch: the training reconstruction path."""
    enc = state.encoder(_prepare(state, images))
    return render_batches(state.generator, enc.z, enc.pose, render_cfg or _render_cfg(state))


@torch.no_grad()
def novel_views(image: torch.Tensor, request: ViewRequest, state,
                include_input_pose: bool = False) -> list[torch.Tensor]:
    """Render the encoded content of ``image`` at every requested pose.

    With ``include_input_pose`` the reconstruction at the predicted pose is
    prepended.
    """
    z, pose = encode_image(state, image)
    poses = torch.as_tensor(np.asarray(request.poses, dtype=np.float64), dtype=state.dtype)
    if include_input_pose:
        poses = torch.cat([pose.unsqueeze(0), poses])
    codes = z.unsqueeze(0).expand(poses.shape[0], -1)
    images = render_batches(state.generator, codes, poses, _render_cfg(state, request.render_overrides))
    return list(images)


@torch.no_grad()
def sample_unconditional(n: int, state, seed: int = 0, prior: PosePrior | None = None,
                         render_overrides: dict | None = None) -> list[torch.Tensor]:
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    prior = prior or state.config.prior
    z = torch.as_tensor(sample_latent(rng, state.config.z_dim, n), dtype=state.dtype)
    poses = torch.as_tensor(prior.sample(rng, n), dtype=state.dtype)
    return list(render_batches(state.generator, z, poses, _render_cfg(state, render_overrides)))


@torch.no_grad()
def interpolate(image_a: torch.Tensor, image_b: torch.Tensor, steps: int, state,
                pose_mode: str = "interpolate") -> list[torch.Tensor]:
    """Linear blend of two encodings on ``steps`` evenly spaced t in [0, 1].

    ``pose_mode="fixed"`` keeps the first image's predicted pose throughout.
    """
    if steps < 2:
        raise ConfigurationError(f"steps must be >= 2, got {steps}")
    if pose_mode not in ("interpolate", "fixed"):
        raise ConfigurationError(f"pose_mode must be 'interpolate' or 'fixed', got {pose_mode!r}")
    z_a, d_a = encode_image(state, image_a)
    z_b, d_b = encode_image(state, image_b)
    t = torch.linspace(0.0, 1.0, steps, dtype=state.dtype).unsqueeze(1)
    z = (1 - t) * z_a + t * z_b
    d = (1 - t) * d_a + t * d_b if pose_mode == "interpolate" else d_a.expand(steps, -1)
    # exact endpoints regardless of rounding in the blend
    z[0], z[-1] = z_a, z_b
    if pose_mode == "interpolate":
        d[0], d[-1] = d_a, d_b
    return list(render_batches(state.generator, z, d, _render_cfg(state)))


@dataclass
class RefineResult:
    z: torch.Tensor
    pose: torch.Tensor
    image: torch.Tensor
    loss: float
    initial_loss: float
    best_iteration: int
    history: list[float]


def refine_latent(image: torch.Tensor, state, init: str = "encoder", iterations: int = 200,
                  step_size: float = DEFAULT_REFINE_STEP, optimize_pose: bool = True,
                  seed: int = 0, weights: LossWeights | None = None) -> RefineResult:
    """Fit (z, pose) to one image with the generator frozen.

    Adam (training betas) descends the reconstruction objective; z is clamped
    into [-1, 1] after every step and the lowest-loss iterate is returned.
    """
    if iterations < 0:
        raise ConfigurationError(f"iterations must be >= 0, got {iterations}")
    if init not in ("encoder", "random"):
        raise ConfigurationError(f"init must be 'encoder' or 'random', got {init!r}")
    cfg = state.config
    target = _prepare(state, image)
    render_cfg = _render_cfg(state)
    weights = weights or LossWeights(pos=0.0, ssim=cfg.lambda_ssim, vgg=cfg.lambda_vgg, recon=1.0)
    if init == "encoder":
        z0, d0 = encode_image(state, image)
    else:
        rng = np.random.default_rng(seed)
        z0 = torch.as_tensor(sample_latent(rng, cfg.z_dim), dtype=state.dtype)
        d0 = torch.as_tensor(np.asarray(cfg.prior.mean, dtype=np.float64), dtype=state.dtype)
    lo, hi = cfg.prior.pitch_range

    frozen = [p.requires_grad for p in state.generator.parameters()]
    state.generator.requires_grad_(False)
    try:
        z = z0.clone().unsqueeze(0).requires_grad_(True)
        d = d0.clone().unsqueeze(0).requires_grad_(optimize_pose)
        variables = [z, d] if optimize_pose else [z]
        m = [torch.zeros_like(v) for v in variables]
        v2 = [torch.zeros_like(v) for v in variables]
        b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps

        def loss_at():
            recon = state.generator(z, d, render_cfg)
            return reconstruction_loss(recon, target, weights, state.perceptual), recon

        loss, recon = loss_at()
        best = (float(loss.detach()), z.detach().clone(), d.detach().clone(), recon.detach()[0], 0)
        initial = best[0]
        history = [initial]
        for t in range(1, iterations + 1):
            grads = torch.autograd.grad(loss, variables)
            with torch.no_grad():
                for var, g, mm, vv in zip(variables, grads, m, v2):
                    mm.mul_(b1).add_(g, alpha=1 - b1)
                    vv.mul_(b2).addcmul_(g, g, value=1 - b2)
                    var.sub_(step_size * (mm / (1 - b1 ** t)) / ((vv / (1 - b2 ** t)).sqrt() + eps))
                z.clamp_(-1.0, 1.0)
                if optimize_pose:
                    d[:, 0].clamp_(lo, hi)
                    d[:, 1].remainder_(2 * math.pi)
            loss, recon = loss_at()
            value = float(loss.detach())
            history.append(value)
            if value < best[0]:
                best = (value, z.detach().clone(), d.detach().clone(), recon.detach()[0], t)
    finally:
        for p, flag in zip(state.generator.parameters(), frozen):
            p.requires_grad_(flag)
    value, zb, db, img, it = best
    return RefineResult(zb[0], db[0], img, value, initial, it, history)
