"""Weak-KAM / Aubry-Mather solver for mean-field particle systems on the
circle: effective Hamiltonians, conjugate value-function pairs, minimal
measures, Peierls barriers, transfer measures, and KAM-regime diagnostics
for the n-particle discretization of the mean-field Lagrangian."""

__version__ = "0.1.0"

from .torus import (  # noqa: F401
    Configuration,
    ConfigurationClass,
    GapCoordinates,
    canonicalize,
    circle_dist,
    coarse_grain,
    dist_S,
    dist_Z,
)
from .model import (  # noqa: F401
    ModelParams,
    PotentialSpec,
    eval_mean_potentials,
    force,
    hamiltonian,
    lagrangian,
)
from .dynamics import PhasePoint, Trajectory, apriori_bounds, energy, integrate  # noqa: F401
from .action import (  # noqa: F401
    BvpResult,
    DiscretePath,
    discrete_action,
    action_gradient,
    h1_kernel,
    minimize_bvp,
)
