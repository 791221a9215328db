"""Relaxed calibration of survey weights and sensitivity to a new auxiliary variable."""

__version__ = "0.1.0"

from .calibrate import (
    CalibrationResult,
    Priorities,
    StandardizedDesign,
    calibrate_weights,
    discrepancies,
    estimate_total,
    expanded_objective,
    objective_value,
    standardize,
    transform_design,
)
from .errors import (
    DegenerateInputError,
    DiscardRateError,
    NoRootError,
    RankDeficientError,
    RelcalError,
    SingularShiftError,
)
from .lowrank import (
    HApplier,
    RankTwoResolvent,
    h_inv_apply,
    q_eigenpairs,
    resolvent_apply,
    singular_shifts,
)
from .sensitivity import (
    CENTERED,
    DELTA_CENTERED,
    DELTA_ORTHOGONAL,
    ORTHOGONAL,
    ExtremeVariable,
    SensitivityConfig,
    SensitivityContext,
    candidate_x,
    delta_bounded_extreme,
    delta_theta_approx,
    delta_theta_exact,
    extreme_variable,
    recalibrate,
    solution_correlation,
    solve_lambda2,
    sweep_t,
)
from .simgen import (
    Population,
    PopulationSpec,
    ReplicationSummary,
    SampleDraw,
    draw_sample,
    gen_population,
    run_replications,
)

__all__ = [name for name in dir() if not name.startswith("_")]
