"""latres: desk-scale one-step latent diffusion restoration with a
channel-split VAE and per-sample decoder routing."""

__version__ = "0.1.0"

from .data_io import Corpus, RunConfig, generate_synthetic_corpus, load_config
from .imaging import (DegradationParams, degrade, edge_magnitude,
                      perceptual_distance, psnr, rgb_to_y, sobel_gradients, ssim)
from .pipeline import RestorerBundle
from .schedules import NoiseSchedule, add_noise, cfg_blend, make_schedule, one_step_denoise
from .vae import ConvVAE, LossWeights, split_latent

__all__ = [
    "Corpus", "RunConfig", "generate_synthetic_corpus", "load_config",
    "DegradationParams", "degrade", "edge_magnitude", "perceptual_distance",
    "psnr", "rgb_to_y", "sobel_gradients", "ssim",
    "RestorerBundle", "NoiseSchedule", "add_noise", "cfg_blend",
    "make_schedule", "one_step_denoise", "ConvVAE", "LossWeights", "split_latent",
]
