"""Numerical laboratory for nonlocal p-Laplacian problems with measure data.

The package computes nonlinear potentials (Wolff, Riesz, fractional maximal
functions), solves discretized nonlocal Dirichlet problems by energy
minimization, builds Lane-Emden solutions by monotone iteration, and probes
two-sided potential estimates, excess decay, and capacity conditions on
truncated box domains.
"""

__version__ = "0.1.0"

from .core import (
    KernelSpec,
    Params,
    ReactionSpec,
    log_weight,
    phi_eval,
    psi_eval,
    reaction_conjugate,
    reaction_eval,
    reaction_series,
    trunc_exp,
)
from .measure import Measure, MollifierSchedule, ball_mass, mollify, weak_limit_check
from .potential import bessel_kernel, frac_max, kernel_potential, riesz, wolff
from .grid import GridFunction, Lattice, PairWeights, apply_operator, assemble_weights, build_lattice, energy, tail
from .solver import (
    SolveConfig,
    compare,
    lane_emden_exponential,
    lane_emden_power,
    scalar_recursion,
    sola_solve,
    solve_dirichlet,
)
from .estimate import (
    av_functional,
    comparison_probe,
    excess,
    excess_decay_probe,
    sharp_maximal,
    sobolev_ratio,
    verify_oscillation,
    verify_two_sided,
)
from .capacity import (
    CapacityProblem,
    capacity_condition,
    maximal_smallness,
    orlicz_capacity,
    wolff_capacity_equiv_probe,
)
