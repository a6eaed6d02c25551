"""Polar-decoupled vector quantization (PCDVQ) of weight matrices."""

from .analysis import ErrorBreakdown, mse_decompose
from .chi import chi_cdf, chi_partial_expectation, chi_pdf, chi_quantile
from .codebooks import (
    CoupledCodebook,
    DirectionCodebook,
    MagnitudeCodebook,
    build_direction_codebook,
    enumerate_e8_directions,
    greedy_direction_codebook,
    kmeans_codebook,
    load_codebook,
    lloyd_max_magnitude_codebook,
    save_codebook,
)
from .quantizer import (
    QuantConfig,
    QuantizedTensor,
    dequantize_tensor,
    dequantize_vector,
    quantize_tensor,
    quantize_vector,
    scalar_quantize,
)
from .transforms import deregularize_matrix, from_polar, regularize_matrix, to_polar

__version__ = "0.1.0"
