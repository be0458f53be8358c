"""Conditional NeRF-GAN: map a single image to a radiance field and render novel views.

The generator is a FiLM-conditioned sinusoidal radiance field (pi-GAN
style); an encoder maps images back to (latent code, pose) and is trained
jointly with the GAN, without any pose or multi-view supervision.
"""

__version__ = "0.1.0"
