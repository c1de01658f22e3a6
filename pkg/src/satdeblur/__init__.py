"""satdeblur: non-blind deconvolution for saturated (clipped) blurry images.

The toolkit models sensor clipping with a per-pixel latent map inside a
Poisson maximum-a-posteriori objective and solves it with a multiplicative
fixed-point iteration.  Map and prior estimators are pluggable: analytic
rules, evaluation oracles, or tiny CNNs loaded from the SDNW weights
format.
"""

from .errors import (
    ConfigError,
    FormatError,
    KernelError,
    NumericalError,
    SatDeblurError,
    ShapeError,
)
from .estimators import (
    EstimatorChoice,
    map_binary_mask,
    map_men,
    map_naive_threshold,
    map_ratio_oracle,
    map_smooth_clip,
    map_unit,
    prior_hyper_laplacian,
    prior_pen,
)
from .image import (
    EPSILON,
    KernelOperator,
    adjoint_convolve,
    convolve,
    delta_kernel,
    edge_taper,
    flip_kernel,
    validate_image,
    validate_kernel,
)
from .metrics import MetricReport, psnr, ssim
from .nn import WeightsBundle, load_weights, men_forward, pen_forward, save_weights
from .objective import ObjectiveValue, poisson_nll, poisson_nll_grad
from .solver import SolverConfig, SolverTrace, classic_rl, intermediate_image, rl_update, solve
from .synth import SynthConfig, SynthPair, enlarge_saturate, generate_kernel, synth_pair

__version__ = "0.1.0"

__all__ = [
    "EPSILON",
    "ConfigError",
    "EstimatorChoice",
    "FormatError",
    "KernelError",
    "KernelOperator",
    "MetricReport",
    "NumericalError",
    "ObjectiveValue",
    "SatDeblurError",
    "ShapeError",
    "SolverConfig",
    "SolverTrace",
    "SynthConfig",
    "SynthPair",
    "WeightsBundle",
    "adjoint_convolve",
    "classic_rl",
    "convolve",
    "delta_kernel",
    "edge_taper",
    "enlarge_saturate",
    "flip_kernel",
    "generate_kernel",
    "intermediate_image",
    "load_weights",
    "map_binary_mask",
    "map_men",
    "map_naive_threshold",
    "map_ratio_oracle",
    "map_smooth_clip",
    "map_unit",
    "men_forward",
    "pen_forward",
    "poisson_nll",
    "poisson_nll_grad",
    "prior_hyper_laplacian",
    "prior_pen",
    "psnr",
    "rl_update",
    "save_weights",
    "solve",
    "ssim",
    "synth_pair",
    "validate_image",
    "validate_kernel",
]
