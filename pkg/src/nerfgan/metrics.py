"""Image-quality and generative metrics plus the evaluation harness.

FID, KID and IS are computed on features from a frozen random convolutional
extractor (no Inception network), so their values are only comparable with
other reports that name the same extractor tag.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .camera import PosePrior
from .data import Dataset, sample_latent
from .errors import ConfigurationError, EvaluationError
from .features import PooledFeatureExtractor
from .losses import ssim

PSNR_CAP = 100.0
KID_SCALE = 100.0
RENDER_CHUNK = 16


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n_samples: int
    n_reference: int
    extractor: str
    seed: int
    mode: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise EvaluationError(f"metric {self.name} is not finite ({self.value})")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# pixel metrics
# ---------------------------------------------------------------------------

def psnr(a, b, max_value: float = 1.0) -> float:
    """10 log10(max^2 / MSE) over all elements; identical inputs give ``PSNR_CAP``."""
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"PSNR needs equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_value ** 2 / mse))


def image_psnr(a: torch.Tensor, b: torch.Tensor) -> np.ndarray:
    """Per-image PSNR of (B, H, W, 3) batches in [-1, 1], measured on [0, 1]."""
    return np.array([psnr((x + 1) / 2, (y + 1) / 2) for x, y in zip(a, b)])


# ---------------------------------------------------------------------------
# distribution metrics
# ---------------------------------------------------------------------------

def _features(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError(f"{name} must be an (N, D) array with N >= 2, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ConfigurationError(f"{name} contains non-finite values")
    return x


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    Tr((S_a S_b)^(1/2)) is evaluated as Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)),
    which has the same eigenvalues but is symmetric, so both square roots use
    eigendecompositions with negative eigenvalues clamped to zero.
    """
    a = _features(features_a, "features_a")
    b = _features(features_b, "features_b")
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    scale = max(abs(eig).max(), 1e-300)
    if eig.min() < -1e-8 * scale:
        warnings.warn(f"FID covariance product is ill-conditioned (smallest eigenvalue {eig.min():.3g})",
                      RuntimeWarning, stacklevel=2)
    trace_sqrt = np.sqrt(np.clip(eig, 0.0, None)).sum()
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(features_a, features_b) -> float:
    """Unbiased squared MMD with a cubic polynomial kernel, times 100."""
    a = _features(features_a, "features_a")
    b = _features(features_b, "features_b")
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    n, m = a.shape[0], b.shape[0]
    k_aa = polynomial_kernel(a, a)
    k_bb = polynomial_kernel(b, b)
    k_ab = polynomial_kernel(a, b)
    within_a = (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
    within_b = (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
    cross = k_ab.mean()
    return KID_SCALE * float(within_a + within_b - 2.0 * cross)


def inception_score(class_probs) -> float:
    """exp(mean KL(p(y|x) || p(y))); rows must be probability vectors."""
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ConfigurationError(f"class_probs must be (N, C), got shape {p.shape}")
    if (p < 0).any() or not np.allclose(p.sum(1), 1.0, atol=1e-6, rtol=0):
        raise ConfigurationError("every row of class_probs must be a probability vector")
    marginal = p.mean(0)
    # 0 log 0 = 0
    ratio = np.where(p > 0, p / np.where(marginal > 0, marginal, 1.0), 1.0)
    kl = (p * np.log(ratio)).sum(1)
    return float(np.exp(kl.mean()))


def circular_correlation(a, b) -> float:
    """Circular correlation coefficient of two angle samples (radians).

    Invariant to a constant offset of either sample; a reflected sample
    flips the sign.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ConfigurationError("circular_correlation needs two 1-D samples of equal length >= 2")
    sa = np.sin(a - np.angle(np.exp(1j * a).mean()))
    sb = np.sin(b - np.angle(np.exp(1j * b).mean()))
    den = math.sqrt((sa ** 2).sum() * (sb ** 2).sum())
    if den == 0.0:
        return 0.0
    return float((sa * sb).sum() / den)


# ---------------------------------------------------------------------------
# IS classifier fixture
# ---------------------------------------------------------------------------

class ShapeClassifier:
    """Softmax regression on pooled features, fitted once to shape-kind labels.

    A fixed evaluation fixture: it is fitted with full-batch L-BFGS in float64
    and never touched by training.
    """

    def __init__(self, extractor: PooledFeatureExtractor, n_classes: int):
        self.extractor = extractor
        self.n_classes = n_classes
        self.mean = torch.zeros(extractor.dim, dtype=torch.float64)
        self.scale = torch.ones(extractor.dim, dtype=torch.float64)
        self.weight = torch.zeros(extractor.dim, n_classes, dtype=torch.float64)
        self.bias = torch.zeros(n_classes, dtype=torch.float64)

    def _features(self, images: torch.Tensor) -> torch.Tensor:
        return (self.extractor(images.to(torch.float64)) - self.mean) / self.scale

    def fit(self, images: torch.Tensor, labels, l2: float = 1e-3, iterations: int = 200) -> "ShapeClassifier":
        labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        raw = self.extractor(images.to(torch.float64))
        self.mean = raw.mean(0)
        self.scale = raw.std(0).clamp_min(1e-8)
        x = (raw - self.mean) / self.scale
        w = torch.zeros_like(self.weight, requires_grad=True)
        b = torch.zeros_like(self.bias, requires_grad=True)
        opt = torch.optim.LBFGS([w, b], max_iter=iterations, line_search_fn="strong_wolfe")

        def closure():
            opt.zero_grad()
            loss = F.cross_entropy(x @ w + b, labels) + l2 * (w ** 2).sum()
            loss.backward()
            return loss

        opt.step(closure)
        self.weight, self.bias = w.detach(), b.detach()
        return self

    @torch.no_grad()
    def probabilities(self, images: torch.Tensor) -> np.ndarray:
        return torch.softmax(self._features(images) @ self.weight + self.bias, dim=-1).numpy()

    def accuracy(self, images: torch.Tensor, labels) -> float:
        return float((self.probabilities(images).argmax(1) == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------

def _resize(images: torch.Tensor, resolution: int) -> torch.Tensor:
    from .training import resize_images
    return resize_images(images, resolution)


@torch.no_grad()
def render_batches(generator, z: torch.Tensor, poses: torch.Tensor, render_cfg) -> torch.Tensor:
    out = [generator(z[i:i + RENDER_CHUNK], poses[i:i + RENDER_CHUNK], render_cfg)
           for i in range(0, z.shape[0], RENDER_CHUNK)]
    return torch.cat(out)


@torch.no_grad()
def extract(extractor, images: torch.Tensor) -> np.ndarray:
    return torch.cat([extractor(images[i:i + 256].to(torch.float64))
                      for i in range(0, images.shape[0], 256)]).numpy()


def evaluate(checkpoint, mode: str, dataset: Dataset, prior: PosePrior | None = None,
             n_samples: int = 64, seed: int = 0, extractor: PooledFeatureExtractor | None = None,
             classifier: ShapeClassifier | None = None) -> list[MetricReport]:
    """FID / KID / IS of generated images against ``dataset``.

    ``checkpoint`` is a checkpoint directory or a loaded training state.
    Conditional mode encodes ``n_samples`` real images and renders them at
    poses drawn from ``prior``; it also reports PSNR and SSIM of the
    reconstructions at the encoder's predicted pose. Unconditional mode
    samples codes from the latent prior. IS is reported when ``classifier``
    is given, or when the dataset carries shape labels to fit one.
    """
    from .training import TrainState, load_checkpoint

    if mode not in ("conditional", "unconditional"):
        raise ConfigurationError(f"mode must be 'conditional' or 'unconditional', got {mode!r}")
    if n_samples < 2:
        raise ConfigurationError(f"n_samples must be >= 2, got {n_samples}")
    state = checkpoint if isinstance(checkpoint, TrainState) else load_checkpoint(Path(checkpoint))
    cfg = state.config
    prior = prior or cfg.prior
    extractor = extractor or PooledFeatureExtractor()
    dtype = state.dtype
    rng = np.random.default_rng(seed)
    resolution = cfg.stages[-1][1].resolution if state.iteration >= cfg.stages[-1][0] else cfg.resolution
    render_cfg = cfg.render_config(resolution, stratified=False)
    real = _resize(dataset.images, resolution).to(dtype)

    poses = torch.as_tensor(prior.sample(rng, n_samples), dtype=dtype)
    pixel_reports = []
    if mode == "conditional":
        idx = rng.choice(len(dataset), size=n_samples, replace=n_samples > len(dataset))
        inputs = real[idx]
        with torch.no_grad():
            enc = state.encoder(inputs)
        fake = render_batches(state.generator, enc.z, poses, render_cfg)
        recon = render_batches(state.generator, enc.z, enc.pose, render_cfg)
        pixel_reports = [("psnr", float(image_psnr(recon, inputs).mean())),
                         ("ssim", float(ssim(recon.double(), inputs.double())))]
    else:
        z = torch.as_tensor(sample_latent(rng, cfg.z_dim, n_samples), dtype=dtype)
        fake = render_batches(state.generator, z, poses, render_cfg)

    feats_fake = extract(extractor, fake)
    feats_real = extract(extractor, real)
    reports = [MetricReport(name, value, n_samples, n_samples, "pixels", seed, mode)
               for name, value in pixel_reports]
    reports.append(MetricReport("fid", fid(feats_fake, feats_real), n_samples, len(real),
                                extractor.tag, seed, mode))
    reports.append(MetricReport("kid", kid(feats_fake, feats_real), n_samples, len(real),
                                extractor.tag, seed, mode))
    if classifier is None and dataset.has_ground_truth:
        labels = [g["label"] for g in dataset.hidden_ground_truth()]
        classifier = ShapeClassifier(extractor, max(labels) + 1).fit(real, labels)
    if classifier is not None:
        reports.append(MetricReport("is", inception_score(classifier.probabilities(fake)),
                                    n_samples, 0, "classifier-" + extractor.tag, seed, mode))
    return reports


def reports_to_dict(reports: list[MetricReport]) -> dict[str, float]:
    return {r.name: r.value for r in reports}
