from .flows import (
    FlowEnsemble,
    backward_drift,
    forward_flow,
    inverse_flow,
    inverse_jacobians,
    jacobian_det_inverse,
)
from .grids import TimeGrid
from .noise import NoiseBundle, load_bundle, sample_noise, save_bundle, substream

__all__ = [
    "FlowEnsemble",
    "NoiseBundle",
    "TimeGrid",
    "backward_drift",
    "forward_flow",
    "inverse_flow",
    "inverse_jacobians",
    "jacobian_det_inverse",
    "load_bundle",
    "sample_noise",
    "save_bundle",
    "substream",
]
