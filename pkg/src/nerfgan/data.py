"""Toy dataset generation, image-folder I/O and latent sampling.

Synthetic images come from an analytic ray tracer over solid primitives with
Lambertian shading; it shares only the camera convention with the NeRF
renderer. The per-view ground truth (pose, shape parameters) lives on the
:class:`Dataset` but is never exposed through :class:`ImageSource`, which is
all the training loop receives.
"""

from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import PosePrior, camera_space_directions, pose_to_camera
from .errors import ConfigurationError

log = logging.getLogger(__name__)

SHAPE_KINDS = ("box", "ellipsoid", "cylinder")
GROUND_TRUTH_FILE = "ground_truth.json"
DEFAULT_LIGHT = (0.55, 0.25, 0.8)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass(frozen=True)
class SyntheticScene:
    kind: str
    hue: float
    size: float
    elongation: float

    @property
    def half_extents(self) -> tuple[float, float, float]:
        return (self.size * self.elongation, self.size, 0.8 * self.size)

    @property
    def albedo(self) -> tuple[float, float, float]:
        return colorsys.hsv_to_rgb(self.hue, 0.75, 0.95)


def random_scene(rng: np.random.Generator) -> SyntheticScene:
    return SyntheticScene(
        kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
        hue=float(rng.random()),
        size=float(rng.uniform(0.33, 0.45)),
        elongation=float(rng.uniform(1.0, 1.6)),
    )


def _intersect(kind: str, o: np.ndarray, d: np.ndarray, ext: np.ndarray):
    """Nearest hit distance and outward normal for rays o + t d against a centred primitive.

    Returns (t, normal) with t = inf where the ray misses.
    """
    n_rays = o.shape[0]
    t_hit = np.full(n_rays, np.inf)
    normal = np.zeros((n_rays, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "box":
            inv = 1.0 / d
            t0 = (-ext - o) * inv
            t1 = (ext - o) * inv
            tmin = np.minimum(t0, t1)
            tmax = np.maximum(t0, t1)
            t_enter = tmin.max(axis=1)
            t_exit = tmax.min(axis=1)
            hit = (t_enter <= t_exit) & (t_enter > 0)
            axis = tmin.argmax(axis=1)
            t_hit[hit] = t_enter[hit]
            rows = np.nonzero(hit)[0]
            normal[rows, axis[hit]] = -np.sign(d[rows, axis[hit]])
        elif kind == "ellipsoid":
            os_, ds = o / ext, d / ext
            a = (ds * ds).sum(1)
            b = 2 * (os_ * ds).sum(1)
            c = (os_ * os_).sum(1) - 1
            disc = b * b - 4 * a * c
            hit = disc >= 0
            t = (-b - np.sqrt(np.where(hit, disc, 0))) / (2 * a)
            hit &= t > 0
            t_hit[hit] = t[hit]
            p = o[hit] + t[hit, None] * d[hit]
            nrm = p / ext ** 2
            normal[hit] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        elif kind == "cylinder":
            # elliptic side wall around z, flat caps at z = +-ext[2]
            o2, d2 = o[:, :2] / ext[:2], d[:, :2] / ext[:2]
            a = (d2 * d2).sum(1)
            b = 2 * (o2 * d2).sum(1)
            c = (o2 * o2).sum(1) - 1
            disc = b * b - 4 * a * c
            ok = (disc >= 0) & (a > 0)
            t_side = (-b - np.sqrt(np.where(ok, disc, 0))) / (2 * a)
            z_side = o[:, 2] + t_side * d[:, 2]
            side = ok & (t_side > 0) & (np.abs(z_side) <= ext[2])
            t_cap = (np.sign(o[:, 2]) * ext[2] - o[:, 2]) / d[:, 2]
            pc = o[:, :2] + t_cap[:, None] * d[:, :2]
            cap = (t_cap > 0) & (((pc / ext[:2]) ** 2).sum(1) <= 1)
            t_side = np.where(side, t_side, np.inf)
            t_cap = np.where(cap, t_cap, np.inf)
            use_side = t_side <= t_cap
            t_hit = np.minimum(t_side, t_cap)
            hit = np.isfinite(t_hit)
            ps = o + t_side[:, None] * d
            ns = np.zeros_like(ps)
            ns[:, :2] = ps[:, :2] / ext[:2] ** 2
            ns /= np.maximum(np.linalg.norm(ns, axis=1, keepdims=True), 1e-12)
            nc = np.zeros_like(ps)
            nc[:, 2] = np.sign(o[:, 2])
            normal = np.where((use_side & hit)[:, None], ns, np.where(hit[:, None], nc, 0.0))
        else:
            raise ConfigurationError(f"unknown shape kind {kind!r}")
    return t_hit, normal


def rasterize(scene: SyntheticScene, pitch: float, yaw: float, resolution: int,
              radius: float = 2.5, fov: float = 0.5, light=DEFAULT_LIGHT,
              ambient: float = 0.3, supersample: int = 2) -> np.ndarray:
    """Ray-trace one view of ``scene``; returns an (H, W, 3) float array in [-1, 1]."""
    cam = pose_to_camera(torch.tensor([pitch, yaw], dtype=torch.float64), radius, fov)
    rot = cam.rotation.double().numpy()
    origin = cam.position.double().numpy()
    s = supersample
    # s x s grid of sub-pixel rays: render at s*res, then box-filter down
    dirs = camera_space_directions((resolution * s, resolution * s), fov, dtype=torch.float64).numpy()
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs @ rot.T
    o = np.broadcast_to(origin, dirs.shape)
    t, normal = _intersect(scene.kind, o, dirs, np.asarray(scene.half_extents))
    light = np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = ambient + (1 - ambient) * np.clip(normal @ light, 0, None)
    rgb = np.where(np.isfinite(t)[:, None], shade[:, None] * np.asarray(scene.albedo), 0.0)
    rgb = rgb.reshape(resolution, s, resolution, s, 3).mean(axis=(1, 3))
    return rgb * 2.0 - 1.0


class ImageSource:
    """Read-only image pool handed to the training loop. Images only, no labels."""

    def __init__(self, images: torch.Tensor):
        self._images = images

    def __len__(self) -> int:
        return self._images.shape[0]

    @property
    def resolution(self) -> int:
        return self._images.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> torch.Tensor:
        """Draw ``n`` images uniformly with replacement."""
        return self._images[rng.integers(len(self), size=n)]


class Dataset:
    """Images in [-1, 1] plus optional hidden ground truth (evaluation only)."""

    def __init__(self, images: torch.Tensor, ground_truth: list[dict] | None = None):
        if images.shape[0] == 0:
            raise ConfigurationError("dataset is empty")
        self.images = images
        self._ground_truth = ground_truth

    def __len__(self) -> int:
        return self.images.shape[0]

    def image_source(self) -> ImageSource:
        return ImageSource(self.images)

    def hidden_ground_truth(self) -> list[dict]:
        """Per-image poses and scene parameters. Never used for training."""
        if self._ground_truth is None:
            raise ConfigurationError("this dataset carries no ground truth")
        return self._ground_truth

    @property
    def has_ground_truth(self) -> bool:
        return self._ground_truth is not None

    def split(self, n_test: int) -> tuple["Dataset", "Dataset"]:
        """Last ``n_test`` images form the held-out split."""
        if not 0 < n_test < len(self):
            raise ConfigurationError(f"cannot hold out {n_test} of {len(self)} images")
        gt = self._ground_truth
        head = Dataset(self.images[:-n_test], gt[:-n_test] if gt else None)
        tail = Dataset(self.images[-n_test:], gt[-n_test:] if gt else None)
        return head, tail

    def save(self, folder: str | Path) -> None:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        width = max(5, len(str(len(self))))
        for i, img in enumerate(self.images):
            to_pil(img).save(folder / f"{i:0{width}d}.png")
        if self._ground_truth is not None:
            (folder / GROUND_TRUTH_FILE).write_text(json.dumps(self._ground_truth, indent=1))


def make_synthetic_dataset(n_scenes: int, views_per_scene: int, prior: PosePrior,
                           resolution: int, seed: int, radius: float = 2.5,
                           fov: float = 0.5) -> Dataset:
    if n_scenes < 1 or views_per_scene < 1:
        raise ConfigurationError("n_scenes and views_per_scene must be >= 1")
    prior.validate()
    rng = np.random.default_rng(seed)
    images, truth = [], []
    for i in range(n_scenes):
        scene = random_scene(rng)
        for pitch, yaw in prior.sample(rng, views_per_scene):
            images.append(rasterize(scene, pitch, yaw, resolution, radius, fov))
            truth.append(dict(scene_index=i, label=SHAPE_KINDS.index(scene.kind),
                              pitch=float(pitch), yaw=float(yaw), **asdict(scene)))
    stack = torch.from_numpy(np.stack(images)).to(torch.float32)
    return Dataset(stack, truth)


def to_pil(image: torch.Tensor) -> Image.Image:
    arr = ((image.detach().cpu().double().numpy() + 1.0) * 127.5).round().clip(0, 255).astype(np.uint8)
    return Image.fromarray(arr, mode="RGB")


def from_pil(img: Image.Image, resolution: int, center_crop: bool = True) -> torch.Tensor:
    img = img.convert("RGB")
    if center_crop:
        w, h = img.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float64) / 127.5 - 1.0
    return torch.from_numpy(arr).to(torch.float32)


def load_image(path: str | Path, resolution: int, center_crop: bool = True) -> torch.Tensor:
    with Image.open(path) as img:
        return from_pil(img, resolution, center_crop)


def load_image_folder(path: str | Path, center_crop: bool = True, resolution: int = 32) -> Dataset:
    """Load every decodable image in ``path`` (sorted by name).

    A ``ground_truth.json`` sidecar, when present, is attached as hidden
    ground truth.
    """
    folder = Path(path)
    images = []
    for f in sorted(folder.iterdir()):
        if f.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            images.append(load_image(f, resolution, center_crop))
        except (OSError, ValueError) as exc:
            log.warning("skipping undecodable image %s: %s", f, exc)
    if not images:
        raise ConfigurationError(f"no decodable images in {folder}")
    truth = None
    sidecar = folder / GROUND_TRUTH_FILE
    if sidecar.exists():
        truth = json.loads(sidecar.read_text())
        if len(truth) != len(images):
            log.warning("ignoring %s: %d entries for %d images", sidecar, len(truth), len(images))
            truth = None
    return Dataset(torch.stack(images), truth)


def sample_latent(rng: np.random.Generator, dim: int, n: int | None = None) -> np.ndarray:
    """I.i.d. uniform [-1, 1] codes: shape (dim,) or (n, dim)."""
    if dim < 1:
        raise ConfigurationError(f"latent dimension must be >= 1, got {dim}")
    shape = (dim,) if n is None else (n, dim)
    return rng.uniform(-1.0, 1.0, size=shape)
