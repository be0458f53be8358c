"""
Image metrics
=============

FID, KID and IS operate on feature vectors or class probabilities; PSNR
and SSIM compare images directly. Each has an easy case with a known value.
"""

import numpy as np
import torch

from nerfgan.losses import ssim
from nerfgan.metrics import circular_correlation, fid, inception_score, kid, psnr

rng = np.random.default_rng(0)
x = rng.normal(size=(200, 8))

print("FID(X, X)          ", fid(x, x))
print("FID shift by 1 (1-D)", fid(x[:, :1], x[:, :1] + 1.0))
print("KID(X, X + 2)   x100", kid(x, x + 2.0))
print("IS uniform rows     ", inception_score(np.full((10, 5), 0.2)))
print("IS one-hot rows     ", inception_score(np.eye(5)))

# images live in [-1, 1]; PSNR takes the value range explicitly
a = rng.uniform(-1, 0.9, (16, 16, 3))
print("PSNR, error 0.1     ", psnr(a, a + 0.1, max_value=2.0))
img = torch.from_numpy(a)
print("SSIM(a, a)          ", ssim(img, img).item())

# Encoder yaw is only defined up to a global offset and orientation.
yaw = rng.uniform(0, 2 * np.pi, 100)
print("circular correlation", circular_correlation(-yaw + 1.0, yaw))
