"""
Training a tiny model and rendering novel views
===============================================

A few hundred steps on a very small model are enough to see the losses
move and to exercise every inference path. Real runs use the CLI:
``nerfgan train --preset desk``.
"""

import tempfile
from pathlib import Path

import torch

from nerfgan.camera import Pose
from nerfgan.config import TrainingConfig
from nerfgan.data import make_synthetic_dataset
from nerfgan.inference import ViewRequest, interpolate, novel_views, parse_poses, refine_latent
from nerfgan.training import load_checkpoint, train

torch.manual_seed(0)
cfg = TrainingConfig(total_iterations=200, batch_size=4, z_dim=8, mapping_layers=2, mapping_width=32,
                     field_layers=2, field_width=16, conv_widths=(16, 32), resolution=16,
                     samples_per_ray=12).validate()
data = make_synthetic_dataset(64, 1, cfg.prior, 16, seed=0, radius=cfg.radius, fov=cfg.fov)

# The first half of training is the warm-up: the encoder learns only the
# inversion objective while the generator adapts to its outputs.
log = []
with tempfile.TemporaryDirectory() as tmp:
    state = train(cfg, data.image_source(), tmp, callback=lambda st, row: log.append(row))
    print("iterations", state.iteration, "log rows", len((Path(tmp) / "log.csv").read_text().splitlines()) - 1)
    for row in log[::50]:
        print(f"  it {row['iteration']:3d} warm-up {row['warmup']} d={row.get('d', float('nan')):.3f}")
    # checkpoints reload bit-exactly
    reloaded = load_checkpoint(Path(tmp) / "checkpoint")

image = data.images[0]
views = novel_views(image, ViewRequest(parse_poses("turntable:6", cfg.prior)), reloaded)
print("turntable", len(views), "views of", tuple(views[0].shape))

frames = interpolate(data.images[0], data.images[1], 5, reloaded)
print("interpolation frames", len(frames))

# Refinement optimizes (z, pose) against the single input image.
result = refine_latent(image, reloaded, iterations=30, step_size=1e-2)
print(f"refine loss {result.initial_loss:.4f} -> {result.loss:.4f} (best at step {result.best_iteration})")
print("view at a chosen pose", tuple(novel_views(image, ViewRequest([Pose(1.0, 1.5)]), reloaded)[0].shape))
