"""ganmosaic: latent-space mosaic optimization over fully convolutional
texture generators.

A trained generator maps a latent field Z = [Z_global, Z_local, Z_periodic]
on an (L, M) lattice to an image 2^depth times larger. This package
optimizes Z under a content loss plus a kernel-density texture prior,
renders arbitrarily large outputs by seamless tiling, and reads/writes the
"GNSC" weight container.
"""

from .errors import (BadMagicError, ChecksumError, DimensionError, EngineError,
                     FormatError, NumericError, SpecMismatchError, StateError,
                     TruncatedFileError, ValidationError, VersionError,
                     WeightFileError)
from .generator import (GeneratorSpec, GeneratorWeights, LatentState,
                        calibrate_bn, forward, output_shape, random_weights,
                        receptive_margin, sample_prior)
from .imageio import ImageBuffer, load_image, save_image
from .losses import (CorrespondenceMap, KdeConfig, LossConfig, content_loss,
                     reference_density, texture_loss, total_loss)
from .optimize import (OptimizerConfig, RunTrace, explore_inits,
                       minimize_box_lbfgs, optimize, random_projection_init,
                       trace_report)
from .tiler import TilePlan, morph_grid, plan_tiles, render_tiled
from .weights_io import (FeatureExtractor, load_features, load_weights,
                         save_features, save_weights)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError", "ChecksumError", "DimensionError", "EngineError",
    "FormatError", "NumericError", "SpecMismatchError", "StateError",
    "TruncatedFileError", "ValidationError", "VersionError", "WeightFileError",
    "GeneratorSpec", "GeneratorWeights", "LatentState", "calibrate_bn",
    "forward", "output_shape", "random_weights", "receptive_margin",
    "sample_prior", "ImageBuffer", "load_image", "save_image",
    "CorrespondenceMap", "KdeConfig", "LossConfig", "content_loss",
    "reference_density", "texture_loss", "total_loss", "OptimizerConfig",
    "RunTrace", "explore_inits", "minimize_box_lbfgs", "optimize",
    "random_projection_init", "trace_report", "TilePlan", "morph_grid",
    "plan_tiles", "render_tiled", "FeatureExtractor", "load_features",
    "load_weights", "save_features", "save_weights",
]
