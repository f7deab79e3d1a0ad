"""Lightweight LiDAR-inertial-visual odometry with a bounded dual-scale map."""
from .state import StateVector, ImuSample, boxplus, boxminus, propagate
from .degeneracy import ConstraintSpectrum, constraint_spectrum, update_degeneracy
from .selector import SelectorThresholds, adaptive_threshold, should_select
from .config import PipelineConfig
from .dataset import SensorStreams, read_dataset, write_dataset
from .metrics import PoseTrajectory, ate_rmse
from .report import RunReport, resource_profile
from .pipeline import run_pipeline, scenario_config
from .estimator import LIVOEstimator

__version__ = "0.1.0"

__all__ = ["StateVector", "ImuSample", "boxplus", "boxminus", "propagate", "ConstraintSpectrum",
           "constraint_spectrum", "update_degeneracy", "SelectorThresholds", "adaptive_threshold",
           "should_select", "PipelineConfig", "SensorStreams", "read_dataset", "write_dataset",
           "PoseTrajectory", "ate_rmse", "RunReport", "resource_profile", "run_pipeline",
           "scenario_config", "LIVOEstimator", "__version__"]
