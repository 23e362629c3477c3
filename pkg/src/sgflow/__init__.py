"""Lagrangian semi-geostrophic flows computed by semi-discrete optimal transport."""

__version__ = "0.1.0"

from .errors import ConfigError, DegenerateCell, NonConvergence, SGFlowError, SupportViolation, ZeroMassRegion
from .measure import DiscreteMeasure, GridField, PhysicalDomain, lr_distance, support_bound, total_mass
from .transport import LaguerreTessellation, mass_jacobian, solve_weights, tessellate
from .potential import ConvexPotential, eval_P, grad_P, grad_P_star, legendre_numeric
from .dynamics import FlowState, RunOptions, dual_velocity, mollified_velocity, run, step
from .physical import compose_inverse, fit_rotation_rate, measure_preservation_stat, reconstruct_F, z_residual
from .orlicz import NFunction, build_dominating_N, conjugate, delta_regular_check, eval_A, luxemburg_norm
from .vortex import angular_rate, exact_F, exact_Phi, sample_patch
from .shallow import HeightField, sw_consistency_iterate, sw_dual_velocity, sw_run
