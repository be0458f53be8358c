"""
A synthetic single-view dataset
===============================

Each image shows one shaded object from one camera drawn from the pose
prior. The poses are kept in a sidecar that training never reads; only
evaluation uses them.
"""

import math
import tempfile
from pathlib import Path

import numpy as np

from nerfgan.camera import Pose, PosePrior
from nerfgan.data import load_image_folder, make_synthetic_dataset

prior = PosePrior("gaussian", Pose(1.1, math.pi / 4), (0.1, 0.35))
data = make_synthetic_dataset(n_scenes=32, views_per_scene=1, prior=prior, resolution=32, seed=0)
print(len(data), "images of shape", tuple(data.images.shape[1:]))

# Training code only sees an image source: no pose, no label.
source = data.image_source()
batch = source.sample(np.random.default_rng(0), 4)
print("training batch", tuple(batch.shape), "has ground truth:", hasattr(source, "hidden_ground_truth"))

# Evaluation can still read the hidden poses.
truth = data.hidden_ground_truth()
print("first pose", {k: round(truth[0][k], 3) for k in ("pitch", "yaw")}, "shape", truth[0]["label"])

# The folder format is PNGs plus ground_truth.json.
with tempfile.TemporaryDirectory() as tmp:
    data.save(tmp)
    print("files", len(list(Path(tmp).glob("*.png"))), "png +", (Path(tmp) / "ground_truth.json").exists())
    again = load_image_folder(tmp, resolution=32)
    print("reloaded max 8-bit error", float((again.images - data.images).abs().max()))
