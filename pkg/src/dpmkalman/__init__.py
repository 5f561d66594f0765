"""State estimation in linear dynamic models with DP-mixture noise.

Batch MCMC (backward-forward Gibbs/MH over per-time noise clusters) and
an online Rao-Blackwellized particle filter, with blind-deconvolution
and change-point applications.
"""

from ._kernels import NUMBA_ENABLED, NUMBA_ENV
from .dpm import AlphaPrior, ClusterRegistry, DpHyper, NIWHyperPrior
from .gaussian import GaussianCluster, NIWParams
from .rng import RngStream
from .statespace import (
    BackwardInfo,
    FilterError,
    KalmanBelief,
    LinearGaussianModel,
)

__all__ = [
    "AlphaPrior",
    "BackwardInfo",
    "ClusterRegistry",
    "DpHyper",
    "FilterError",
    "GaussianCluster",
    "KalmanBelief",
    "LinearGaussianModel",
    "NIWHyperPrior",
    "NIWParams",
    "NUMBA_ENABLED",
    "NUMBA_ENV",
    "RngStream",
]

__version__ = "0.1.0"
