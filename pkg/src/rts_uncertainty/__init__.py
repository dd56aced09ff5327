"""Measurement uncertainty for multi-RTS ground-truth trajectories.

Raw range/angle readings from three robotic total stations are turned into
prism positions with Monte-Carlo covariances, interpolated in continuous time
with a Gaussian process, and fused into 6-DOF poses with 6x6 covariances.
"""

from .config import RunConfig
from .errors import ConfigError, DataError, NumericalError, RtsError, StageError
from .filtering import FilterParams, filter_dynamics, gate_fused, split_segments
from .fusion import FusedPose, ReferenceTriplet, Triplet, assemble_triplets, fuse_pose_mc
from .geometry import (
    PoseEstimate,
    RigidTransform,
    cartesian_to_spherical,
    pose_mean_cov,
    rigid_registration,
    se3_exp,
    se3_log,
    spherical_to_cartesian,
    sqrt_frobenius,
)
from .gp import GpPrior, TrajectoryGp, fit, query
from .montecarlo import (
    GcpSet,
    NoiseSourceMask,
    PointEstimate,
    apply_calibration_mc,
    calibrate_extrinsic_mc,
    linearized_covariance_oracle,
    measurement_covariance,
    noise_source_breakdown,
)
from .noise import (
    AtmosphericConditions,
    NoiseBudget,
    RawMeasurement,
    VelocityStats,
    atmospheric_correction_ppm,
    estimate_velocity,
    perturb_raw,
    time_sync_noise,
)
from .pipeline import GroundTruth, build_ground_truth
from .simulate import Scenario, TrajectorySet, generate_truth, simulate_gcps, simulate_measurements

__version__ = "0.1.0"
