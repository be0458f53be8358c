"""Joint optimization of generator, discriminator and encoder.

Every iteration trains D (fake images from a frozen G) and E (inversion of
those same fakes). Even iterations additionally train G adversarially; odd
iterations train G, and E once warm-up is over, on the conditional
adversarial plus reconstruction objective. Each (objective, network) pair
owns its Adam moments.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .config import AblationFlags, Stage, TrainingConfig, dump_config, format_value, parse_pairs
from .data import ImageSource, sample_latent
from .errors import CheckpointError, EvaluationError, NonFiniteLossError
from .features import RandomConvFeatures
from .generator import Generator
from .losses import (conditional_adversarial_loss, gan_discriminator_loss, gan_generator_loss,
                     gan_inversion_loss, reconstruction_loss)
from .networks import Discriminator, Encoder

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
MANIFEST = "manifest.ini"
PERCEPTUAL_WIDTHS = (16, 32, 64)

LOG_COLUMNS = ("iteration", "parity", "warmup", "d", "d_real", "d_fake", "d_pose", "r1",
               "inversion", "g", "g_pose", "odd", "cond", "cond_pose", "recon", "recon_mse",
               "recon_ssim", "recon_vgg")


class Adam:
    """Adam over a fixed list of named tensors, updated in place.

    Kept separate from ``torch.optim`` so moments serialize by parameter
    name and the learning rate can follow the stage schedule.
    """

    def __init__(self, named_params, betas=(0.0, 0.9), eps=1e-8):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self, grads, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + self.eps))

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for n, m, v in zip(self.names, self.m, self.v):
            out[f"m.{n}"] = m
            out[f"v.{n}"] = v
        return out


class Routing(NamedTuple):
    """Which updates an iteration performs."""

    train_d: bool
    train_e_inversion: bool
    train_g_adversarial: bool
    train_g_odd: bool
    train_e_odd: bool
    use_cond: bool
    use_recon: bool


def warmup_active(iteration: int, total: int, flags: AblationFlags = AblationFlags()) -> bool:
    """True while the encoder is held out of the odd-step objectives."""
    if flags.always_warmup:
        return True
    if flags.no_warmup or flags.freeze_generator:
        return False
    return iteration < total // 2


def routing(iteration: int, cfg: TrainingConfig) -> Routing:
    flags = cfg.flags
    warm = warmup_active(iteration, cfg.total_iterations, flags)
    odd = iteration % 2 == 1
    return Routing(
        train_d=True,
        train_e_inversion=not (flags.no_inversion or flags.drop_latent_gan),
        train_g_adversarial=not odd and not (flags.freeze_generator or flags.drop_latent_gan),
        train_g_odd=odd and not flags.freeze_generator,
        train_e_odd=odd and not warm,
        use_cond=odd and not flags.no_cond_adversarial,
        use_recon=odd,
    )


def stage_config(iteration: int, cfg: TrainingConfig) -> Stage:
    current = cfg.stages[0][1]
    for start, stage in cfg.stages:
        if iteration >= start:
            current = stage
    return current


@dataclass
class TrainState:
    config: TrainingConfig
    generator: Generator
    discriminator: Discriminator
    encoder: Encoder
    perceptual: RandomConvFeatures
    optimizers: dict[str, Adam]
    rng: np.random.Generator
    iteration: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return next(self.generator.parameters()).dtype

    def parameter_groups(self) -> dict[str, dict[str, torch.Tensor]]:
        return {
            "G": dict(self.generator.named_parameters()),
            "D": dict(self.discriminator.named_parameters()),
            "E": dict(self.encoder.named_parameters()),
        }


OPTIMIZER_GROUPS = {"D": "D", "E_inv": "E", "G_adv": "G", "G_odd": "G", "E_odd": "E"}


def build_models(cfg: TrainingConfig, dtype=torch.float32):
    """Fresh G, D, E and the frozen perceptual extractor, seeded from ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    gen = Generator(cfg.generator_arch, cfg.radius, cfg.fov).to(dtype)
    disc = Discriminator(cfg.conv_arch).to(dtype)
    enc = Encoder(cfg.z_dim, cfg.conv_arch, cfg.encoder_pose_box).to(dtype)
    perceptual = RandomConvFeatures(PERCEPTUAL_WIDTHS, cfg.perceptual_seed)
    return gen, disc, enc, perceptual


def new_state(cfg: TrainingConfig, dtype=torch.float32) -> TrainState:
    cfg.validate()
    gen, disc, enc, perceptual = build_models(cfg, dtype)
    nets = {"G": gen, "D": disc, "E": enc}
    betas = (cfg.beta1, cfg.beta2)
    optimizers = {name: Adam(list(nets[group].named_parameters()), betas, cfg.eps)
                  for name, group in OPTIMIZER_GROUPS.items()}
    return TrainState(cfg, gen, disc, enc, perceptual, optimizers,
                      np.random.default_rng(cfg.seed))


def resize_images(images: torch.Tensor, resolution: int) -> torch.Tensor:
    """(B, H, W, 3) -> (B, r, r, 3); area averaging when shrinking."""
    if images.shape[1] == resolution:
        return images
    x = images.permute(0, 3, 1, 2)
    mode = "area" if resolution < images.shape[1] else "bilinear"
    kwargs = {} if mode == "area" else {"align_corners": False}
    return F.interpolate(x, size=(resolution, resolution), mode=mode, **kwargs).permute(0, 2, 3, 1)


def _check(name: str, loss: torch.Tensor, iteration: int) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(name, value, iteration)
    return value


@contextmanager
def _objective(name: str, iteration: int):
    """Report non-finite network outputs as a failure of objective ``name``."""
    try:
        yield
    except EvaluationError as exc:
        raise NonFiniteLossError(name, float("nan"), iteration) from exc


def _apply(state: TrainState, opt_name: str, loss: torch.Tensor, lr: float, grads=None) -> None:
    opt = state.optimizers[opt_name]
    if grads is None:
        grads = torch.autograd.grad(loss, opt.params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(opt.params, grads)]
    opt.step(grads, lr)


def training_step(state: TrainState, cfg: TrainingConfig | None, source: ImageSource) -> dict:
    """Run one iteration in place and return its loss report."""
    cfg = cfg or state.config
    it = state.iteration
    route = routing(it, cfg)
    stage = stage_config(it, cfg)
    rcfg = cfg.render_config(stage.resolution, stage.samples_per_ray)
    weights = cfg.loss_weights
    prior = cfg.prior
    rng = state.rng
    dtype = state.dtype
    G, D, E = state.generator, state.discriminator, state.encoder
    n = cfg.batch_size
    wrap = cfg.pose_wraparound
    report = {"iteration": it, "parity": it % 2,
              "warmup": int(warmup_active(it, cfg.total_iterations, cfg.flags))}

    def tensor(a):
        return torch.as_tensor(a, dtype=dtype)

    def real_batch():
        return resize_images(source.sample(rng, n).to(dtype), stage.resolution)

    # ---- discriminator and inversion (every iteration) -------------------
    d_rand = tensor(prior.sample(rng, n))
    if cfg.flags.drop_latent_gan:
        # auto-encoder ablation: no latent prior, fakes come from encoded reals
        with torch.no_grad():
            z_rand = E(real_batch()).z
    else:
        z_rand = tensor(sample_latent(rng, cfg.z_dim, n))
    with torch.no_grad():
        fake = G(z_rand, d_rand, rcfg, rng)
    real = real_batch()

    if route.train_d:
        if cfg.r1_gamma > 0:
            real.requires_grad_(True)
        out_real = D(real)
        out_fake = D(fake)
        with _objective("gan_discriminator", it):
            loss_d = gan_discriminator_loss(out_real.logit, out_fake.logit, d_rand, out_fake.pose,
                                            weights.pos, wrap)
        report["d"] = _check("gan_discriminator", loss_d, it)
        report["d_real"] = float(F.softplus(-out_real.logit.detach()).mean())
        report["d_fake"] = float(F.softplus(out_fake.logit.detach()).mean())
        report["d_pose"] = float(((d_rand - out_fake.pose.detach()) ** 2).sum(-1).mean())
        if cfg.r1_gamma > 0:
            (grad_real,) = torch.autograd.grad(out_real.logit.sum(), real, create_graph=True)
            r1 = 0.5 * cfg.r1_gamma * grad_real.pow(2).flatten(1).sum(1).mean()
            report["r1"] = _check("r1_penalty", r1, it)
            loss_d = loss_d + r1
        _apply(state, "D", loss_d, stage.lr_d)

    if route.train_e_inversion:
        enc = E(fake)
        with _objective("gan_inversion", it):
            loss_inv = gan_inversion_loss(enc.z, z_rand, enc.pose, d_rand, wrap)
        report["inversion"] = _check("gan_inversion", loss_inv, it)
        _apply(state, "E_inv", loss_inv, stage.lr_e)

    # ---- generator adversarial step (even iterations) --------------------
    if route.train_g_adversarial:
        z = tensor(sample_latent(rng, cfg.z_dim, n))
        d = tensor(prior.sample(rng, n))
        out = D(G(z, d, rcfg, rng))
        with _objective("gan_generator", it):
            loss_g = gan_generator_loss(out.logit, d, out.pose, weights.pos, wrap)
        report["g"] = _check("gan_generator", loss_g, it)
        report["g_pose"] = float(((d - out.pose.detach()) ** 2).sum(-1).mean())
        _apply(state, "G_adv", loss_g, stage.lr_g)

    # ---- reconstruction + conditional adversarial (odd iterations) -------
    if route.train_g_odd or route.train_e_odd:
        real = real_batch()
        if route.train_e_odd:
            enc = E(real)
        else:
            with torch.no_grad():
                enc = E(real)
        if route.use_cond:
            d_cond = tensor(prior.sample(rng, n))
            images = G(torch.cat([enc.z, enc.z]), torch.cat([enc.pose, d_cond]), rcfg, rng)
            recon, cond_images = images[:n], images[n:]
        else:
            recon = G(enc.z, enc.pose, rcfg, rng)
        terms = {}
        loss_recon = reconstruction_loss(recon, real, weights, state.perceptual, terms)
        report["recon"] = _check("reconstruction", loss_recon, it)
        for k, v in terms.items():
            report[f"recon_{k}"] = v
        loss_odd = weights.recon * loss_recon
        if route.use_cond:
            out = D(cond_images)
            loss_cond = conditional_adversarial_loss(out.logit)
            report["cond"] = _check("conditional_adversarial", loss_cond, it)
            # D's pose estimate on conditional renders is monitored only, never a loss term
            report["cond_pose"] = float(((d_cond - out.pose.detach()) ** 2).sum(-1).mean())
            loss_odd = loss_odd + loss_cond
        report["odd"] = _check("odd", loss_odd, it)
        targets = []
        if route.train_g_odd:
            targets.append("G_odd")
        if route.train_e_odd:
            targets.append("E_odd")
        params = [p for t in targets for p in state.optimizers[t].params]
        grads = torch.autograd.grad(loss_odd, params, allow_unused=True)
        start = 0
        for t in targets:
            k = len(state.optimizers[t].params)
            lr = stage.lr_g if t == "G_odd" else stage.lr_e
            _apply(state, t, loss_odd, lr, grads=grads[start:start + k])
            start += k

    state.iteration += 1
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _state_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    tensors = {}
    for group, params in state.parameter_groups().items():
        for name, p in params.items():
            tensors[f"{group}.{name}"] = p
    for opt_name, opt in state.optimizers.items():
        for name, t in opt.state_tensors().items():
            tensors[f"opt.{opt_name}.{name}"] = t
    return tensors


ARCH_KEYS = ("z_dim", "mapping_layers", "mapping_width", "field_layers", "field_width", "omega0",
             "conv_widths", "resolution", "prior_kind")


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """Write a checkpoint directory: ``manifest.ini`` plus one raw little-endian file per tensor."""
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    dtype = state.dtype
    np_dtype = "<f8" if dtype == torch.float64 else "<f4"
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cfg = state.config
    cp["manifest"] = {
        "format_version": str(CHECKPOINT_FORMAT),
        "package_version": __version__,
        "iteration": str(state.iteration),
        "seed": str(cfg.seed),
        "dtype": "float64" if dtype == torch.float64 else "float32",
        "perceptual_extractor": state.perceptual.tag,
        "rng_state": json.dumps(state.rng.bit_generator.state),
    }
    cp["architecture"] = {k: format_value(getattr(cfg, k)) for k in ARCH_KEYS}
    cp["config"] = dict(line.split(" = ", 1) for line in dump_config(cfg).splitlines())
    cp["optimizer_steps"] = {name: str(opt.t) for name, opt in state.optimizers.items()}
    tensors = {}
    for name, t in _state_tensors(state).items():
        fname = f"{name}.bin"
        arr = t.detach().cpu().numpy().astype(np_dtype, copy=False)
        arr.tofile(path / "tensors" / fname)
        tensors[name] = ",".join(map(str, t.shape)) + f" {fname}"
    cp["tensors"] = tensors
    with open(path / MANIFEST, "w") as fh:
        cp.write(fh)
    return path


def read_manifest(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not (path / MANIFEST).exists():
        raise CheckpointError(f"{path}: no {MANIFEST} found")
    try:
        cp.read(path / MANIFEST)
    except configparser.Error as exc:
        raise CheckpointError(f"{path / MANIFEST}: unreadable manifest ({exc})") from None
    for section in ("manifest", "architecture", "config", "tensors", "optimizer_steps"):
        if section not in cp:
            raise CheckpointError(f"{path / MANIFEST}: missing section [{section}]")
    version = cp["manifest"].get("format_version")
    if version != str(CHECKPOINT_FORMAT):
        raise CheckpointError(
            f"{path / MANIFEST}: format_version {version}, this build reads {CHECKPOINT_FORMAT}")
    return cp


def load_checkpoint(path: str | Path, expected: TrainingConfig | None = None) -> TrainState:
    """Rebuild the full training state from a checkpoint directory.

    With ``expected``, architecture keys must match it exactly.
    """
    path = Path(path)
    cp = read_manifest(path)
    cfg_values = parse_pairs([f"{k} = {v}" for k, v in cp["config"].items()], str(path / MANIFEST))
    cfg = TrainingConfig(**cfg_values)
    arch = cp["architecture"]
    for key in ARCH_KEYS:
        stored = arch.get(key)
        if stored is None:
            raise CheckpointError(f"{path / MANIFEST}: architecture key {key} missing")
        if expected is not None:
            want = format_value(getattr(expected, key))
            if stored != want:
                raise CheckpointError(
                    f"{path / MANIFEST}: architecture mismatch for {key}: checkpoint has {stored}, "
                    f"expected {want}")
        if stored != cp["config"].get(key):
            raise CheckpointError(f"{path / MANIFEST}: architecture key {key} disagrees with [config]")
    dtype = torch.float64 if cp["manifest"]["dtype"] == "float64" else torch.float32
    np_dtype = "<f8" if dtype == torch.float64 else "<f4"
    state = new_state(cfg, dtype)
    if cp["manifest"].get("perceptual_extractor") != state.perceptual.tag:
        raise CheckpointError(f"{path / MANIFEST}: perceptual extractor mismatch")
    targets = _state_tensors(state)
    listed = cp["tensors"]
    missing = set(targets) - set(listed)
    extra = set(listed) - set(targets)
    if missing or extra:
        raise CheckpointError(
            f"{path / MANIFEST}: tensor list mismatch (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]})")
    with torch.no_grad():
        for name, target in targets.items():
            shape_s, fname = listed[name].rsplit(" ", 1)
            shape = tuple(int(s) for s in shape_s.split(",") if s)
            if shape != tuple(target.shape):
                raise CheckpointError(
                    f"{name}: checkpoint shape {shape} does not match model shape {tuple(target.shape)}")
            file = path / "tensors" / fname
            try:
                arr = np.fromfile(file, dtype=np_dtype)
            except OSError as exc:
                raise CheckpointError(f"{file}: {exc}") from None
            if arr.size != target.numel():
                raise CheckpointError(f"{file}: expected {target.numel()} values, found {arr.size}")
            target.copy_(torch.from_numpy(arr.reshape(shape).astype(arr.dtype.newbyteorder("="))))
    for name, opt in state.optimizers.items():
        opt.t = int(cp["optimizer_steps"][name])
    state.iteration = int(cp["manifest"]["iteration"])
    state.rng.bit_generator.state = json.loads(cp["manifest"]["rng_state"])
    return state


def load_pretrained_generator(state: TrainState, path: str | Path) -> None:
    """Copy G and D weights from another checkpoint (naive-inversion ablation)."""
    other = load_checkpoint(path)
    with torch.no_grad():
        for mine, theirs in ((state.generator, other.generator), (state.discriminator, other.discriminator)):
            src = dict(theirs.named_parameters())
            for name, p in mine.named_parameters():
                if src[name].shape != p.shape:
                    raise CheckpointError(f"pretrained {name} has shape {tuple(src[name].shape)}")
                p.copy_(src[name].to(p.dtype))


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

def set_deterministic(on: bool = True) -> None:
    torch.use_deterministic_algorithms(on)
    if on:
        torch.set_num_threads(1)


class CsvLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        new = not self.path.exists()
        self.fh = open(self.path, "a", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        if new:
            self.writer.writeheader()

    def write(self, row: dict) -> None:
        self.writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})

    def close(self) -> None:
        self.fh.close()


def train(cfg: TrainingConfig, source: ImageSource, out_dir: str | Path | None = None,
          iterations: int | None = None, state: TrainState | None = None,
          checkpoint_every: int = 0, log_every: int = 0,
          callback: Callable[[TrainState, dict], None] | None = None) -> TrainState:
    """Train for ``iterations`` steps (default: up to ``cfg.total_iterations``).

    With ``out_dir`` a CSV loss log (``log.csv``) is appended to and the final
    state is written to ``out_dir/checkpoint``.
    """
    state = state or new_state(cfg)
    stop = cfg.total_iterations if iterations is None else min(state.iteration + iterations,
                                                               cfg.total_iterations)
    csv_log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_log = CsvLog(out_dir / "log.csv")
    t0 = time.time()
    try:
        while state.iteration < stop:
            report = training_step(state, cfg, source)
            if csv_log:
                csv_log.write(report)
            if callback:
                callback(state, report)
            if log_every and state.iteration % log_every == 0:
                shown = {k: round(v, 4) for k, v in report.items() if isinstance(v, float)}
                log.info("it %d (%.1fs) %s", state.iteration, time.time() - t0, shown)
            if out_dir is not None and checkpoint_every and state.iteration % checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"checkpoint-{state.iteration:06d}")
    finally:
        if csv_log:
            csv_log.close()
    if out_dir is not None:
        save_checkpoint(state, out_dir / "checkpoint")
    return state
