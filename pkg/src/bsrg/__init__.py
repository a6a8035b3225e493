"""Desk-scale numerical laboratory for one block-spin coarse-graining
step of a weakly coupled complex boson field on an anisotropic periodic
lattice.

The package builds the blocking and covariance operator suite, solves
the background and critical fields, and verifies by brute-force
quadrature that the small-field approximation errors decay faster than
any power of the coupling.
"""

from .lattice import (
    Field,
    Lattice,
    LatticeError,
    NormReport,
    coarse_lattice,
    fine_lattice,
    forward_difference,
    make_lattice,
    momentum_grid,
    norms,
    plane_wave,
    unit_lattice,
)
from .operators import (
    BranchError,
    FlowParams,
    LinOp,
    OperatorError,
    ParamsError,
    RGOperators,
    load_linop,
    principal_sqrt,
    save_linop,
    sup_op_norm,
    symbol,
)
from .interaction import Interaction, InteractionError, coupling_rn, eval_V
from .background import (
    BackgroundSolution,
    CriticalFields,
    DivergenceError,
    DomainEscapeError,
    solve_background,
    solve_critical_fields,
)
from .action import (
    BoundsReport,
    eval_An,
    eval_An_at_background,
    effective_exponent,
    fluctuation_expansion,
    proposition1_check,
    symbol_constants,
)
from .domains import (
    RegionSpec,
    in_An,
    in_checkInt,
    in_Int,
    step1_c,
    step1_inclusion_check,
    step1_split,
    wall_positivity,
    wall_radius,
)
from .quadrature import (
    IntegralEstimate,
    QuadratureError,
    StationaryPhase,
    fluctuation_log_integrand,
    holomorphy_boundary_check,
    integrate_cylinder_wall,
    integrate_real_slice,
    integrate_surface_slice,
    stationary_phase_eval,
    stokes_identity_check,
)
from .experiments import (
    DecayFit,
    ExperimentError,
    error_scaling_experiment,
    rg_step_comparison,
)
from .cli import main

__version__ = "0.1.0"
