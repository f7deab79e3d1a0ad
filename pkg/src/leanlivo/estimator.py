"""scikit-learn style wrapper around the odometry pipeline.

``fit`` runs the filter over one sequence (streams, a dataset directory or
a scenario name); ``predict`` returns estimated positions at query times;
``transform`` returns full pose rows; ``score`` is the negative ATE RMSE
against ground truth, so that larger is better as sklearn expects.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation, Slerp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_increasing
from .config import PipelineConfig
from .dataset import SensorStreams, read_dataset
from .metrics import PoseTrajectory, ate_rmse
from .pipeline import run_pipeline


def as_streams(X, seed=0) -> SensorStreams:
    """Coerce ``X`` (streams, dataset path or scenario name) to sensor streams."""
    if isinstance(X, SensorStreams):
        return X
    if isinstance(X, (str, Path)):
        p = Path(X)
        if p.is_dir():
            return read_dataset(p)
        from .sim import SCENARIOS, SensorNoiseSpec, scenario, simulate
        if str(X) in SCENARIOS:
            return simulate(scenario(str(X)), SensorNoiseSpec(seed=seed))
        raise ValueError(f"{X!r} is neither a dataset directory nor a scenario name")
    raise TypeError(f"expected SensorStreams, a dataset path or a scenario name, got {type(X).__name__}")


def interpolate_poses(traj: PoseTrajectory, t):
    """Positions (linear) and rotations (slerp) of ``traj`` at times ``t``.

    Times outside the trajectory are clamped to its ends.
    """
    t = np.clip(check_increasing(t, strict=False), traj.t[0], traj.t[-1])
    pos = np.column_stack([np.interp(t, traj.t, traj.positions[:, i]) for i in range(3)])
    if len(traj) == 1:
        return pos, np.repeat(traj.rotations[:1], len(t), axis=0)
    q = traj.quaternions
    rots = Slerp(traj.t, Rotation.from_quat(q[:, [1, 2, 3, 0]]))(t)
    return pos, rots.as_matrix()


class LIVOEstimator(BaseEstimator):
    """Odometry pipeline as an estimator.

    Parameters mirror the most used :class:`PipelineConfig` fields;
    ``config`` supplies every other field (and is not modified).
    """

    def __init__(self, selector=True, longterm_map=True, local_edge=200.0,
                 degeneracy_threshold=0.07, tau_position=1.0, tau_rotation_deg=60.0,
                 visual=True, seed=0, config: Optional[PipelineConfig] = None):
        self.selector = selector
        self.longterm_map = longterm_map
        self.local_edge = local_edge
        self.degeneracy_threshold = degeneracy_threshold
        self.tau_position = tau_position
        self.tau_rotation_deg = tau_rotation_deg
        self.visual = visual
        self.seed = seed
        self.config = config

    def make_config(self) -> PipelineConfig:
        base = self.config if self.config is not None else PipelineConfig()
        return base.replace(selector=bool(self.selector), longterm_map=bool(self.longterm_map),
                            local_edge=float(self.local_edge),
                            degeneracy_threshold=float(self.degeneracy_threshold),
                            tau_position=float(self.tau_position),
                            tau_rotation_deg=float(self.tau_rotation_deg),
                            visual=bool(self.visual), seed=int(self.seed))

    def fit(self, X, y=None):
        """Run the pipeline over ``X``. ``y`` is ignored (ground truth comes with X)."""
        cfg = self.make_config()
        streams = as_streams(X, cfg.seed)
        self.report_ = run_pipeline(cfg, streams)
        self.trajectory_ = self.report_.trajectory
        self.groundtruth_ = streams.groundtruth
        self.n_frames_ = len(self.trajectory_)
        return self

    def predict(self, X):
        """Estimated positions (N, 3) at times ``X``."""
        check_is_fitted(self, "trajectory_")
        return interpolate_poses(self.trajectory_, X)[0]

    def transform(self, X):
        """Pose rows ``t, px, py, pz, qw, qx, qy, qz`` at times ``X``."""
        check_is_fitted(self, "trajectory_")
        t = np.asarray(X, dtype=float).reshape(-1)
        pos, R = interpolate_poses(self.trajectory_, t)
        q = Rotation.from_matrix(R).as_quat()[:, [3, 0, 1, 2]]
        return np.column_stack([t, pos, q])

    def score(self, X=None, y=None):
        """Negative ATE RMSE (m) against ``y`` or the ground truth seen in ``fit``."""
        check_is_fitted(self, "trajectory_")
        gt = y if y is not None else self.groundtruth_
        if gt is None:
            raise ValueError("no ground truth to score against")
        return -ate_rmse(self.trajectory_, gt)
