"""Wasserstein distributionally robust chance-constrained programs:
exact certification, conic CVaR reformulation, a cutting-surface solver and
scenario / sample-approximation baselines."""

__version__ = "0.1.0"

from .core import (AmbiguityBall, DiscreteDistribution, SampleSet, Tolerances, DEFAULT_TOLERANCES,  # noqa: F401
                   empirical_cvar, empirical_distribution, wasserstein_distance)
from .constraints import (ConstraintOracle, PiecewiseBilinearConstraint, PolyhedralSupport,  # noqa: F401
                          PolytopeX, distance_to_violation, evaluate, lipschitz_xi_bound)
from .conic import ConicProgram, ProgramBuilder, SolverResult, solve  # noqa: F401
from .exact import (ExactCertificate, brute_force_worst_case, cvar_form_value, membership_dcp,  # noqa: F401
                    worst_case_violation)
from .reformulate import (ComparisonReport, DrccpSolution, build_cvar_drccp, compare_sets,  # noqa: F401
                          ex_post_threshold, membership_cdcp, membership_inner, membership_sample_approx,
                          solve_cvar_drccp, solve_inner_cdcp, solve_scenario)
from .cutting import AlgoParams, Bounds, compute_bounds, estimate_B, run_cutting_surface  # noqa: F401
