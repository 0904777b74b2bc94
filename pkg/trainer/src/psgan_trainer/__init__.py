"""psgan-trainer: toy-scale adversarial training of spatial texture
generators, exporting GNSC weight files consumable by mosaic engines."""

from .export import export_weights, fnv1a64, manifest_for
from .model import Discriminator, Generator, ModelConfig, sample_latent
from .train import TrainConfig, freeze_bn_statistics, load_textures, train

__version__ = "0.1.0"

__all__ = ["Discriminator", "Generator", "ModelConfig", "TrainConfig",
           "export_weights", "fnv1a64", "freeze_bn_statistics",
           "load_textures", "manifest_for", "sample_latent", "train"]
