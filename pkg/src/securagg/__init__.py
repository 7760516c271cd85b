"""Secure distributed max-aggregation for wireless sensor networks.

Covariance-intersection fusion, threshold-gated broadcast with two-hop
suppression, majority-vote detection and isolation of compromised nodes,
and a deterministic discrete-event simulator to exercise it all.
"""

from .fusion import (
    DEFAULT_PARAMS,
    FusionParams,
    GaussianEstimate,
    ci_fuse,
    combine_local,
    deviation_sigmas,
    fuse_global,
    optimal_omega,
    weight_w1,
    weight_w2,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PARAMS",
    "FusionParams",
    "GaussianEstimate",
    "ci_fuse",
    "combine_local",
    "deviation_sigmas",
    "fuse_global",
    "optimal_omega",
    "weight_w1",
    "weight_w2",
    "__version__",
]
