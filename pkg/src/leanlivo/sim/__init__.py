"""Deterministic synthetic world, trajectory and sensor generator."""
from .scenarios import SCENARIOS, Scenario, UnknownScenarioError, scenario, simulate
from .sensors import (LidarPattern, SensorNoiseSpec, generate_imu, raycast_lidar, render_camera,
                      rng_for)
from .trajectory import ParametricPath, SegmentPath, SpeedRamp, TrajectorySpec
from .world import Plane, Texture, WorldModel

__all__ = ["SCENARIOS", "Scenario", "UnknownScenarioError", "scenario", "simulate", "LidarPattern",
           "SensorNoiseSpec", "generate_imu", "raycast_lidar", "render_camera", "rng_for",
           "ParametricPath", "SegmentPath", "SpeedRamp", "TrajectorySpec", "Plane", "Texture",
           "WorldModel"]
