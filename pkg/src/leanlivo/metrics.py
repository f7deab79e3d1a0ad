"""Trajectory containers and absolute trajectory error after rigid alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

MAX_ASSOC_DT = 0.01


class MetricUndefinedError(ValueError):
    """Too few associated pose pairs to compute the metric."""
    category = "metric-undefined"


@dataclass
class PoseTrajectory:
    """Timestamped poses; quaternions are (w, x, y, z)."""
    t: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        if not (self.t.shape[0] == self.positions.shape[0] == self.quaternions.shape[0]):
            raise ValueError("trajectory arrays must have equal length")

    def __len__(self):
        return self.t.shape[0]

    @classmethod
    def from_rotations(cls, t, rotations, positions):
        R = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
        if R.shape[0] == 0:
            q = np.zeros((0, 4))
        else:
            xyzw = Rotation.from_matrix(R).as_quat()
            q = np.column_stack([xyzw[:, 3], xyzw[:, :3]])
            # canonical hemisphere keeps serialisation deterministic
            q = q * np.where(q[:, :1] < 0, -1.0, 1.0)
        return cls(t, positions, q)

    @property
    def rotations(self):
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        q = self.quaternions
        return Rotation.from_quat(np.column_stack([q[:, 1:], q[:, :1]])).as_matrix()


def associate(t_est, t_gt, max_dt=MAX_ASSOC_DT):
    """Nearest-timestamp pairs (i_est, i_gt) with |dt| <= max_dt."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if t_est.size == 0 or t_gt.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    j = np.clip(np.searchsorted(t_gt, t_est), 1, max(t_gt.size - 1, 1))
    if t_gt.size == 1:
        j = np.zeros_like(j)
    else:
        left = t_gt[j - 1]
        j = np.where(np.abs(t_est - left) <= np.abs(t_gt[j] - t_est), j - 1, j)
    ok = np.abs(t_gt[j] - t_est) <= max_dt
    return np.flatnonzero(ok), j[ok]


def align(est, gt):
    """Rigid (R, t) minimising sum |gt - (R est + t)|^2 (no scale)."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    S = (gt - mu_g).T @ (est - mu_e) / est.shape[0]
    U, _, Vt = np.linalg.svd(S)
    W = np.eye(3)
    W[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ W @ Vt
    return R, mu_g - R @ mu_e


def position_errors(estimated: PoseTrajectory, ground_truth: PoseTrajectory, max_dt=MAX_ASSOC_DT):
    """Per-pair position errors after alignment, with the matched timestamps."""
    ie, ig = associate(estimated.t, ground_truth.t, max_dt)
    if ie.size < 3:
        raise MetricUndefinedError(f"only {ie.size} associated pose pairs (need >= 3)")
    e = estimated.positions[ie]
    g = ground_truth.positions[ig]
    R, t = align(e, g)
    err = g - (e @ R.T + t)
    return estimated.t[ie], np.linalg.norm(err, axis=1)


def ate_rmse(estimated: PoseTrajectory, ground_truth: PoseTrajectory, max_dt=MAX_ASSOC_DT) -> float:
    _, err = position_errors(estimated, ground_truth, max_dt)
    return float(np.sqrt(np.mean(err * err)))
