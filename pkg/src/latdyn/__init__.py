"""Spring-damper latent dynamics for pose-driven residual motion."""

from .dynamics import (
    DynamicsModel,
    ForceGains,
    ForceParams,
    LatentState,
    init_dynamics_model,
    rollout,
    step,
    step_variant,
)
from .estimator import LatentDynamicsRegressor
from .exceptions import ConfigError, DimensionError, DivergenceError, FitError, FormatError, GradientError
from .features import JointGroupMap, PoseFeatureExtractor, descriptor_sequence, pose_descriptor
from .latent_space import LatentSpace, LatentSpaceModel, fit_latent_space
from .so3 import RotationSequence
from .training import CurriculumSchedule, TrainConfig, TrainingClip, schedule_at, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CurriculumSchedule",
    "DimensionError",
    "DivergenceError",
    "DynamicsModel",
    "FitError",
    "ForceGains",
    "ForceParams",
    "FormatError",
    "GradientError",
    "JointGroupMap",
    "LatentDynamicsRegressor",
    "LatentSpace",
    "LatentSpaceModel",
    "LatentState",
    "PoseFeatureExtractor",
    "RotationSequence",
    "TrainConfig",
    "TrainingClip",
    "descriptor_sequence",
    "fit_latent_space",
    "init_dynamics_model",
    "pose_descriptor",
    "rollout",
    "schedule_at",
    "step",
    "step_variant",
    "train",
]
