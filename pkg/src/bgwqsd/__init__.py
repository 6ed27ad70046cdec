"""Quasi-stationary analysis of subcritical two-sex branching processes.

The package is organized around one round trip:

    model      -- process definition, exact one-step laws, sampling
    spectral   -- mean growth operator, Perron data, scaling eigenfunction
    kernel     -- truncated sub-Markov kernels, QSD eigen-data, classes
    qsd_family -- resolvent-series measures (a continuum of QSD candidates)
    lyapunov   -- drift inequality and exponential-convergence diagnostics
    montecarlo -- trajectory ensembles, decay-rate and Yaglom estimates
    cli        -- the ``bgwqsd`` command gluing the stages into pipelines
"""

from .model import (
    MatingFunction,
    ModelSpec,
    OffspringLaw,
    ValidationReport,
    mating_apply,
    step,
    step_distribution,
    validate_model,
)
from .spectral import (
    SpectralResult,
    check_primitivity,
    eval_eigenfunction,
    growth_operator,
    lyapunov_weight,
    power_iterate,
)
from .kernel import (
    QsdEstimate,
    TruncatedKernel,
    build_kernel_exact,
    build_kernel_mc,
    communication_classes,
    enumerate_states,
    estimate_j,
    kernel_from_matrix,
    solve_qsd,
    spectral_radius,
    survival_profile,
)
from .qsd_family import (
    QsdFamilyEntry,
    build_family,
    default_anchor_ladder,
    default_lambda_grid,
    estimate_upsilon0,
    resolvent_measure,
)
from .lyapunov import (
    ConvergenceCriteriaReport,
    LyapunovReport,
    check_moment_assumption,
    verify_convergence_criteria,
    verify_drift,
)
from .montecarlo import (
    TrajectoryBatch,
    conditional_law,
    estimate_theta0,
    qsd_as_law,
    simulate_batch,
    tv_distance,
    yaglom_convergence,
)
from .streams import CoupleStream
from . import presets

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
