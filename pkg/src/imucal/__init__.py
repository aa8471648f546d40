"""Multi-IMU extrinsic calibration from raw inertial measurements.

Estimates the relative position and orientation of every IMU on a rigid
body, plus per-gyroscope axis misalignment, by batch nonlinear least
squares over accelerometer/gyroscope residuals tied together through
rigid-body kinematics.  Includes a measurement simulator, an
observability checker, and the simulation studies behind the `imucal`
command-line tool.
"""
from .imu_model import ImuNoiseSpec, accel_measure, gyro_measure
from .metrics import (
    Table,
    TrialResult,
    aux_rmse,
    extrinsic_rmse,
    pool_trials,
    render_table,
    rmse_misalignments_deg,
    rmse_orientations_deg,
    rmse_positions_mm,
)
from .observability import (
    RankReport,
    check_rank,
    extrinsic_information,
    is_extrinsic_deficient,
    jacobian_block_dims,
)
from .problem import (
    CovarianceWeights,
    ParameterLayout,
    ParameterVector,
    ProblemInstance,
    ProblemOptions,
    apply_step,
    assemble,
    covariance_weights,
    initial_guess,
    residual_accel,
    residual_bias_walk,
    residual_gyro,
)
from .simulator import (
    ExcitationProfile,
    ExtrinsicSet,
    GroundTruthLog,
    MeasurementSeries,
    RigScenario,
    Trajectory,
    make_constant_acceleration_trajectory,
    make_excitation_trajectory,
    make_single_axis_rotation_trajectory,
    perturb_extrinsics,
    propagate_rigid_body,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)
from .solver import SolveReport, SolverOptions, evaluate_cost, solve
from . import so3

__version__ = "0.1.0"

__all__ = [
    "ImuNoiseSpec",
    "accel_measure",
    "gyro_measure",
    "Table",
    "TrialResult",
    "aux_rmse",
    "extrinsic_rmse",
    "pool_trials",
    "render_table",
    "rmse_misalignments_deg",
    "rmse_orientations_deg",
    "rmse_positions_mm",
    "RankReport",
    "check_rank",
    "extrinsic_information",
    "is_extrinsic_deficient",
    "jacobian_block_dims",
    "CovarianceWeights",
    "ParameterLayout",
    "ParameterVector",
    "ProblemInstance",
    "ProblemOptions",
    "apply_step",
    "assemble",
    "covariance_weights",
    "initial_guess",
    "residual_accel",
    "residual_bias_walk",
    "residual_gyro",
    "ExcitationProfile",
    "ExtrinsicSet",
    "GroundTruthLog",
    "MeasurementSeries",
    "RigScenario",
    "Trajectory",
    "make_constant_acceleration_trajectory",
    "make_excitation_trajectory",
    "make_single_axis_rotation_trajectory",
    "perturb_extrinsics",
    "propagate_rigid_body",
    "reference_extrinsics",
    "reference_noise_spec",
    "simulate",
    "SolveReport",
    "SolverOptions",
    "evaluate_cost",
    "solve",
    "so3",
    "__version__",
]
