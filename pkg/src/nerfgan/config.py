"""Training configuration: flat key-value files, presets and ablations.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys are the field names of :class:`TrainingConfig`. Unknown keys, values
that do not parse as the field's type, and constraint violations raise
:class:`ConfigurationError` naming the key.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

from .camera import Pose, PosePrior
from .errors import ConfigurationError
from .generator import GeneratorArch
from .losses import LossWeights
from .networks import ConvArch, hemisphere_pose_box
from .rendering import RenderConfig

ABLATION_TAGS = "ABCDEFGHIJ"
LOWER_RECON_WEIGHTS = {"G": 1.0, "H": 0.1, "I": 0.01, "J": 0.001}


@dataclass(frozen=True)
class AblationFlags:
    freeze_generator: bool = False  # A: naive GAN inversion
    drop_latent_gan: bool = False  # B: auto-encoder
    no_inversion: bool = False  # C
    no_cond_adversarial: bool = False  # D
    no_warmup: bool = False  # E
    always_warmup: bool = False  # F
    lambda_recon: float | None = None  # G-J

    @classmethod
    def from_tag(cls, tag: str | None) -> "AblationFlags":
        if not tag:
            return cls()
        tag = tag.upper()
        if tag == "A":
            return cls(freeze_generator=True)
        if tag == "B":
            return cls(drop_latent_gan=True)
        if tag == "C":
            return cls(no_inversion=True)
        if tag == "D":
            return cls(no_cond_adversarial=True)
        if tag == "E":
            return cls(no_warmup=True)
        if tag == "F":
            return cls(always_warmup=True)
        if tag in LOWER_RECON_WEIGHTS:
            return cls(no_warmup=True, lambda_recon=LOWER_RECON_WEIGHTS[tag])
        raise ConfigurationError(f"unknown ablation tag {tag!r}; expected one of {ABLATION_TAGS}")


class Stage(NamedTuple):
    resolution: int
    samples_per_ray: int
    lr_g: float
    lr_d: float
    lr_e: float


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 0
    total_iterations: int = 20000
    batch_size: int = 8
    # generator
    z_dim: int = 16
    mapping_layers: int = 3
    mapping_width: int = 256
    field_layers: int = 4
    field_width: int = 64
    omega0: float = 30.0
    # discriminator / encoder backbone
    conv_widths: tuple[int, ...] = (32, 64, 128, 128)
    # camera and pose prior
    radius: float = 2.5
    fov: float = 0.5
    near: float | None = None  # default radius - 1
    far: float | None = None  # default radius + 1
    stratified: bool = True
    prior_kind: str = "gaussian"
    pitch_mean: float = 1.1
    yaw_mean: float = math.pi / 4
    pitch_std: float = 0.1
    yaw_std: float = 0.35
    # progressive schedule: stage 1 from iteration 0, stage 2 from stage2_iteration (0 = off)
    resolution: int = 32
    samples_per_ray: int = 24
    lr_g: float = 4e-5
    lr_d: float = 4e-4
    lr_e: float = 4e-4
    stage2_iteration: int = 0
    stage2_resolution: int = 64
    stage2_samples_per_ray: int = 72
    stage2_lr_g: float = 2e-5
    stage2_lr_d: float = 2e-4
    stage2_lr_e: float = 2e-4
    # objective weights
    lambda_pos: float = 0.0
    lambda_ssim: float = 1.0
    lambda_vgg: float = 1.0
    lambda_recon: float = 5.0
    pose_wraparound: bool = False
    r1_gamma: float = 0.0  # not part of the method; stability option, off by default
    # optimizer
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    ablation: str = ""
    perceptual_seed: int = 0
    # synthetic training set used when no image folder is given
    n_scenes: int = 2000

    # ---- derived views -------------------------------------------------
    @property
    def flags(self) -> AblationFlags:
        return AblationFlags.from_tag(self.ablation)

    @property
    def loss_weights(self) -> LossWeights:
        recon = self.flags.lambda_recon
        return LossWeights(pos=self.lambda_pos, ssim=self.lambda_ssim, vgg=self.lambda_vgg,
                           recon=self.lambda_recon if recon is None else recon)

    @property
    def prior(self) -> PosePrior:
        return PosePrior(self.prior_kind, Pose(self.pitch_mean, self.yaw_mean),
                         (self.pitch_std, self.yaw_std))

    @property
    def generator_arch(self) -> GeneratorArch:
        return GeneratorArch(self.z_dim, self.mapping_layers, self.mapping_width,
                             self.field_layers, self.field_width, self.omega0)

    @property
    def conv_arch(self) -> ConvArch:
        return ConvArch(self.resolution, tuple(self.conv_widths))

    @property
    def encoder_pose_box(self):
        return hemisphere_pose_box() if self.prior_kind == "uniform-hemisphere" else None

    @property
    def near_plane(self) -> float:
        return self.radius - 1.0 if self.near is None else self.near

    @property
    def far_plane(self) -> float:
        return self.radius + 1.0 if self.far is None else self.far

    @property
    def stages(self) -> list[tuple[int, Stage]]:
        out = [(0, Stage(self.resolution, self.samples_per_ray, self.lr_g, self.lr_d, self.lr_e))]
        if self.stage2_iteration > 0:
            out.append((self.stage2_iteration, Stage(
                self.stage2_resolution, self.stage2_samples_per_ray,
                self.stage2_lr_g, self.stage2_lr_d, self.stage2_lr_e)))
        return out

    def render_config(self, resolution: int | None = None, samples_per_ray: int | None = None,
                      stratified: bool | None = None) -> RenderConfig:
        res = resolution or self.resolution
        return RenderConfig((res, res), samples_per_ray or self.samples_per_ray,
                            self.near_plane, self.far_plane,
                            self.stratified if stratified is None else stratified)

    def validate(self) -> "TrainingConfig":
        def bad(key, why):
            raise ConfigurationError(f"{key}: {why}")

        for key in ("total_iterations", "batch_size", "z_dim", "mapping_layers", "mapping_width",
                    "field_layers", "field_width", "resolution", "samples_per_ray", "n_scenes"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        for key in ("lr_g", "lr_d", "lr_e", "stage2_lr_g", "stage2_lr_d", "stage2_lr_e", "radius", "eps"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        if not 0 < self.fov < math.pi:
            bad("fov", "must lie in (0, pi)")
        if not self.near_plane < self.far_plane:
            bad("near/far", f"near ({self.near_plane}) must be < far ({self.far_plane})")
        if self.near_plane <= 0:
            bad("near", "must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            bad("beta1/beta2", "must lie in [0, 1)")
        if self.stage2_iteration < 0:
            bad("stage2_iteration", "must be >= 0")
        if self.stage2_iteration and self.stage2_iteration >= self.total_iterations:
            bad("stage2_iteration", "stage switch must come before total_iterations")
        if not self.conv_widths:
            bad("conv_widths", "needs at least one layer")
        try:
            self.loss_weights.validate()
            self.prior.validate()
            AblationFlags.from_tag(self.ablation)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{_key_for(exc)}: {exc}") from None
        if self.r1_gamma < 0:
            bad("r1_gamma", "must be >= 0")
        for _, stage in self.stages:
            if stage.resolution % self.resolution or (stage.resolution // self.resolution) & (
                    stage.resolution // self.resolution - 1):
                bad("stage2_resolution", "must be the base resolution times a power of two")
        return self


def _key_for(exc: Exception) -> str:
    msg = str(exc)
    for key in ("lambda_pos", "lambda_ssim", "lambda_vgg", "lambda_recon"):
        if key in msg:
            return key
    if "pose prior" in msg:
        return "prior"
    return "ablation"


FIELDS = {f.name: f for f in fields(TrainingConfig)}


def _parse_value(key: str, raw: str):
    default = FIELDS[key].default
    ann = str(FIELDS[key].type)
    raw = raw.strip()
    try:
        if "tuple" in ann:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if ann.startswith("bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "None" in ann and raw.lower() in ("", "none"):
            return None
        if ann.startswith("int"):
            return int(raw)
        if ann.startswith("float"):
            return float(raw)
        if ann.startswith("str"):
            return raw
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {ann}") from None
    raise ConfigurationError(f"{key}: unsupported field type {ann} (default {default!r})")


def parse_pairs(lines, source: str = "config") -> dict:
    values = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigurationError(f"{key}: unknown config key ({source}:{n})")
        values[key] = _parse_value(key, raw)
    return values


def parse_config(path: str | Path | None = None, overrides=(), base: TrainingConfig | None = None) -> TrainingConfig:
    """File values, then ``key=value`` overrides, then defaults (from ``base``)."""
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_pairs(overrides, "override"))
    return replace(base or TrainingConfig(), **values).validate()


def format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: TrainingConfig) -> str:
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def config_to_dict(cfg: TrainingConfig) -> dict:
    return dataclasses.asdict(cfg)


def ablation_config(tag: str, base: TrainingConfig) -> TrainingConfig:
    """``base`` with the ablation ``tag`` (A..J) applied."""
    AblationFlags.from_tag(tag)
    if not tag:
        raise ConfigurationError("empty ablation tag")
    return replace(base, ablation=tag.upper()).validate()


def paper_progressive_config(**overrides) -> TrainingConfig:
    """The published schedule for CARLA / ShapeNet-SRN sized runs (never run in tests)."""
    values = dict(
        total_iterations=300_000, batch_size=48, z_dim=256,
        resolution=32, samples_per_ray=96, lr_g=4e-5, lr_d=4e-4, lr_e=4e-4,
        stage2_iteration=50_000, stage2_resolution=64, stage2_samples_per_ray=72,
        stage2_lr_g=2e-5, stage2_lr_d=2e-4, stage2_lr_e=2e-4,
        lambda_recon=5.0, lambda_ssim=1.0, lambda_vgg=1.0, lambda_pos=0.0,
        prior_kind="uniform-hemisphere",
    )
    values.update(overrides)
    return TrainingConfig(**values).validate()


def paper_celeba_config(**overrides) -> TrainingConfig:
    values = dict(
        total_iterations=300_000, batch_size=48, z_dim=512,
        resolution=64, samples_per_ray=24, lr_g=6e-5, lr_d=2e-4, lr_e=2e-4,
        conv_widths=(32, 64, 128, 128, 128),
        lambda_recon=5.0, lambda_ssim=1.0, lambda_vgg=1.0, lambda_pos=15.0,
        prior_kind="gaussian",
    )
    values.update(overrides)
    return TrainingConfig(**values).validate()


PRESETS = {
    "desk": lambda **kw: TrainingConfig(**kw).validate(),
    "paper-progressive": paper_progressive_config,
    "paper-celeba": paper_celeba_config,
}
