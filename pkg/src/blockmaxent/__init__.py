"""Exact and maximum-entropy steady-state analysis of a two-stage blockchain queue."""
from .errors import BlockMaxentError, InputError, NumericalError
from .exact import (
    JointDistribution,
    Moments,
    SparseGenerator,
    auto_truncate,
    build_generator,
    marginals,
    moments,
    solve_params,
    solve_stationary,
)
from .maxent import (
    MaxEntSolution,
    constraint_residuals,
    entropy_closed_form,
    entropy_direct,
    kl_divergence,
    maxent_distribution,
    mean_block_given_y,
    solve_x,
    solve_y,
    solve_z,
    tabulate,
)
from .model import Params, StabilityReport, State, stability_check, validate_params
from .simulation import SimConfig, SimEstimate, batch_means, simulate

__version__ = "0.1.0"
