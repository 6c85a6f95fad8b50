"""Progressive learned image codec.

A two-level latent codec: a base latent gives a coarse reconstruction, and a
residual top latent is transmitted progressively. Residual elements are
ranked by their predicted standard deviation, so any quality q in (0, 100]
selects the q% most uncertain elements; decoding a prefix of the bitstream
reproduces exactly the reconstruction that a fresh encode at that quality
would give.
"""

from .bd import RDCurve, bd_metrics, bd_psnr, bd_rate
from .codec import ProgressiveDecoder, RDPoint, decode_image, encode_image
from .container import BitstreamContainer, append_delta, extract_substream
from .errors import (
    PlcError,
    ShapeError,
    QualityError,
    MaskError,
    CodingError,
    WeightsError,
    ContainerError,
    ImageError,
    CurveError,
)
from .imageio import mse, psnr, read_image, write_image
from .masking import canonical_quality, delta_mask, sigma_mask
from .tensor import Tensor
from .weights import (
    ArchConfig,
    ModelWeights,
    generate_seed_weights,
    load_weights,
    save_weights,
)

__version__ = "0.1.0"

__all__ = [
    "PlcError",
    "ShapeError",
    "QualityError",
    "MaskError",
    "CodingError",
    "WeightsError",
    "ContainerError",
    "ImageError",
    "CurveError",
    "Tensor",
    "ArchConfig",
    "ModelWeights",
    "generate_seed_weights",
    "load_weights",
    "save_weights",
    "encode_image",
    "decode_image",
    "ProgressiveDecoder",
    "RDPoint",
    "RDCurve",
    "bd_rate",
    "bd_psnr",
    "bd_metrics",
    "BitstreamContainer",
    "extract_substream",
    "append_delta",
    "read_image",
    "write_image",
    "mse",
    "psnr",
    "canonical_quality",
    "sigma_mask",
    "delta_mask",
    "__version__",
]
