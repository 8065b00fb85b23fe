"""Stain normalization toolkit for H&E histopathology images.

Classical optical-density normalizers (SVD-plane and sparse-NMF stain
estimation), windowed structural-similarity metrics and losses, a
self-attentive U-Net inference engine fed by a binary weight archive, and a
patch-extract/normalize/stitch pipeline for whole-slide images.
"""

from .attention import AttentionParams, attention_forward, attention_map
from .errors import (
    ConfigError,
    DegenerateStainsError,
    DimensionMismatchError,
    MalformedImageError,
    MissingTensorError,
    NonConvergenceError,
    NoTissueError,
    PatchGridError,
    ProcessingError,
    StainNormError,
    UnsupportedFormatError,
    WeightFormatError,
)
from .imaging import GrayImage, RgbImage, read_image, resize, to_grayscale, write_image
from .inference import discriminator_forward, generator_forward
from .losses import BatchBundle, LossWeights, total_objective
from .macenko import MacenkoParams, estimate_stains_macenko, normalize_macenko
from .optical_density import (
    ConcentrationMap,
    OdConfig,
    OdImage,
    StainMatrix,
    decompose,
    od_to_rgb,
    reconstruct,
    rgb_to_od,
)
from .ssim import MetricReport, SsimParams, dssim, evaluate_dataset, ssim, ssim_rgb
from .vahadane import SnmfParams, estimate_stains_snmf, normalize_vahadane
from .weights_io import (
    GeneratorWeights,
    NetworkArch,
    apply_spectral_normalization,
    load_weights,
    save_weights,
)
from .wsi import PatchGrid, PatchRecord, extract_patches, normalize_wsi, seam_score, stitch

__version__ = "0.1.0"
