"""Nonparametric mixture of Gaussian-process velocity fields.

Learns how many distinct multi-vehicle motion patterns a framed
trajectory dataset contains, assigns every frame to one of them by Gibbs
sampling, and uses the fitted mixture to classify new frames and
simulate multi-vehicle trajectories along each pattern's posterior mean
velocity field.
"""

from .empirical import (
    CountDistribution,
    PositionDistribution,
    fit_count_dist,
    fit_position_dist,
)
from .gibbs import (
    NEW_PATTERN,
    GibbsTrace,
    PatternCache,
    ScoreBreakdown,
    assignment_posterior,
    crp_log_priors,
    frame_log_likelihood,
    new_pattern_log_likelihood,
    run_gibbs,
    sample_alpha,
    update_alpha,
    update_assignment,
    update_length_scales,
)
from .gp import (
    ConditioningError,
    FieldPosterior,
    VectorField,
    gaussian_log_density,
    gp_posterior,
    kernel_matrix,
    mean_velocity_field,
    sq_exp_kernel,
)
from .model import (
    Frame,
    KernelParams,
    MixtureState,
    MotionPattern,
    PriorConfig,
    RegionOfInterest,
    stack_frames,
    validate_state,
)
from .simulate import Trajectory, classify_frame, generate_frame, simulate_trajectories

__version__ = "0.1.0"

__all__ = [
    "CountDistribution",
    "PositionDistribution",
    "fit_count_dist",
    "fit_position_dist",
    "NEW_PATTERN",
    "GibbsTrace",
    "PatternCache",
    "ScoreBreakdown",
    "assignment_posterior",
    "crp_log_priors",
    "frame_log_likelihood",
    "new_pattern_log_likelihood",
    "run_gibbs",
    "sample_alpha",
    "update_alpha",
    "update_assignment",
    "update_length_scales",
    "ConditioningError",
    "FieldPosterior",
    "VectorField",
    "gaussian_log_density",
    "gp_posterior",
    "kernel_matrix",
    "mean_velocity_field",
    "sq_exp_kernel",
    "Frame",
    "KernelParams",
    "MixtureState",
    "MotionPattern",
    "PriorConfig",
    "RegionOfInterest",
    "stack_frames",
    "validate_state",
    "Trajectory",
    "classify_frame",
    "generate_frame",
    "simulate_trajectories",
]
