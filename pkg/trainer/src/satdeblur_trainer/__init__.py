"""Training side of the satdeblur toolkit.

Trains the tiny map/prior estimation CNNs by unrolling the multiplicative
deconvolution update, then exports weights in the SDNW format the
inference engine loads.  The only coupling to the deblurring package is
through files: synthesized fixture trees in, SDNW weights and SDBF
activation fixtures out.
"""

from .networks import MapEstimator, PriorEstimator
from .train import TrainConfig, export_weights, train
from .unroll import rl_update, stage_l1_loss, unrolled_solve

__all__ = [
    "MapEstimator",
    "PriorEstimator",
    "TrainConfig",
    "export_weights",
    "rl_update",
    "stage_l1_loss",
    "train",
    "unrolled_solve",
]
