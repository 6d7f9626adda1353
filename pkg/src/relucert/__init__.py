"""relucert: tightness-aware SDP robustness certification for small ReLU networks.

The package certifies targeted robustness of dense feedforward ReLU networks
through a layerwise semidefinite relaxation, decides when that relaxation is
provably exact via closed-form projection geometry, and cross-validates every
numeric claim with a rank-2 factorized solver and brute-force oracles.
"""

from .bm2 import BM2Config, BM2Result, BM2State, bm2_solve, certify_global, kkt_residuals
from .geometry import (
    cap_to_quadratic,
    multi_cap_condition,
    project_cap_axial,
    project_hyperbola_general,
    rank1_update_min,
    spherical_cap_distance,
)
from .network import (
    Ball,
    CertInstance,
    Halfspace,
    Network,
    attack_instance,
    ball_from_halfspace,
    forward,
    halfspace_to_ball,
    load_instance,
    load_network,
    save_instance,
    save_network,
    truncate,
)
from .sdp import (
    ABound,
    GramSolution,
    a_from_b_bound,
    build_relaxation,
    eigen_verdict,
    extract_candidate,
    solve_sdp,
)
from .tightness import (
    collinearity_report,
    layer_tight_sufficient,
    multilayer_trivial_tight,
    neuron_tight,
    propagate_collinearity_check,
)

__version__ = "0.1.0"

__all__ = [
    "Network",
    "CertInstance",
    "Halfspace",
    "Ball",
    "forward",
    "attack_instance",
    "halfspace_to_ball",
    "ball_from_halfspace",
    "truncate",
    "load_network",
    "save_network",
    "load_instance",
    "save_instance",
    "spherical_cap_distance",
    "cap_to_quadratic",
    "rank1_update_min",
    "project_hyperbola_general",
    "project_cap_axial",
    "multi_cap_condition",
    "neuron_tight",
    "layer_tight_sufficient",
    "multilayer_trivial_tight",
    "collinearity_report",
    "propagate_collinearity_check",
    "build_relaxation",
    "solve_sdp",
    "extract_candidate",
    "a_from_b_bound",
    "eigen_verdict",
    "GramSolution",
    "ABound",
    "bm2_solve",
    "certify_global",
    "kkt_residuals",
    "BM2Config",
    "BM2State",
    "BM2Result",
    "__version__",
]
