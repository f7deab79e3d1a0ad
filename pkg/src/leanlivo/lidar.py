"""LiDAR stage: motion undistortion, point-to-plane residuals, iterated update."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import so3
from .esikf import Measurement, UpdateResult, iterated_update
from .state import StateVector
from .voxel_map import PlaneFeature, VoxelMap

log = logging.getLogger(__name__)

MAX_IMU_GAP = 0.02


class UndistortionGapError(ValueError):
    """IMU stream does not cover the scan densely enough."""


class UnderconstrainedWarning(UserWarning):
    pass


@dataclass
class LidarScan:
    times: np.ndarray      # (N,) per-point timestamps
    points: np.ndarray     # (N, 3) LiDAR frame
    scan_start: float
    scan_end: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.times.shape[0] != self.points.shape[0]:
            raise ValueError("one timestamp per point required")
        if self.times.size:
            if np.any(np.diff(self.times) < 0):
                raise ValueError("point timestamps must be non-decreasing")
            if self.times[0] < self.scan_start - 1e-9 or self.times[-1] > self.scan_end + 1e-9:
                raise ValueError("point timestamps outside [scan_start, scan_end]")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Extrinsic:
    """IMU-from-LiDAR transform: p_imu = R @ p_lidar + t."""
    R: np.ndarray = None
    t: np.ndarray = None

    def __post_init__(self):
        self.R = np.eye(3) if self.R is None else np.asarray(self.R, dtype=float)
        self.t = np.zeros(3) if self.t is None else np.asarray(self.t, dtype=float)


IDENTITY = Extrinsic()


def _imu_arrays(imu_stream):
    if isinstance(imu_stream, tuple):
        return imu_stream
    t = np.array([s.timestamp for s in imu_stream])
    w = np.array([s.angular_velocity for s in imu_stream]).reshape(-1, 3)
    a = np.array([s.linear_acceleration for s in imu_stream]).reshape(-1, 3)
    return t, w, a


def undistort(scan: LidarScan, imu_stream, state: StateVector, extrinsic: Extrinsic = IDENTITY):
    """Express every point in the LiDAR frame at ``scan_end``.

    ``state`` is the estimate at ``scan_start``. Poses inside the scan come
    from integrating the bias-corrected IMU (zero-order hold on each
    sample). ``imu_stream`` is a list of :class:`ImuSample` or a tuple of
    arrays ``(t, gyro, accel)``.
    """
    if len(scan) == 0:
        return np.zeros((0, 3))
    t_imu, gyro, acc = _imu_arrays(imu_stream)
    t0, t1 = scan.scan_start, scan.scan_end
    if t_imu.size == 0 or t_imu[0] > t0 + 1e-9 or t_imu[-1] < t1 - MAX_IMU_GAP:
        raise UndistortionGapError(f"IMU does not cover scan [{t0}, {t1}]")
    j0 = max(int(np.searchsorted(t_imu, t0, side="right")) - 1, 0)
    j1 = int(np.searchsorted(t_imu, t1, side="left"))
    inner = t_imu[j0:j1 + 1]
    knots = np.concatenate([[t0], inner[(inner > t0) & (inner < t1)], [t1]])
    if np.max(np.diff(knots)) > MAX_IMU_GAP + 1e-9:
        raise UndistortionGapError(f"IMU gap > {MAX_IMU_GAP * 1e3:.0f} ms inside scan ending {t1}")
    n = knots.shape[0]
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    vs = np.empty((n, 3))
    ws = np.empty((n, 3))
    accs = np.empty((n, 3))
    R, p, v = state.rotation.copy(), state.position.copy(), state.velocity.copy()
    for k in range(n):
        i = max(int(np.searchsorted(t_imu, knots[k], side="right")) - 1, 0)
        w = gyro[i] - state.gyro_bias
        a = R @ (acc[i] - state.accel_bias) + state.gravity
        Rs[k], ps[k], vs[k], ws[k], accs[k] = R, p, v, w, a
        if k + 1 < n:
            dt = knots[k + 1] - knots[k]
            p = p + v * dt + 0.5 * a * dt * dt
            v = v + a * dt
            R = R @ so3.exp(w * dt)
    idx = np.clip(np.searchsorted(knots, scan.times, side="right") - 1, 0, n - 1)
    dt = (scan.times - knots[idx])[:, None]
    Rt = Rs[idx] @ so3.exp_batch(ws[idx] * dt)
    pt = ps[idx] + vs[idx] * dt + 0.5 * accs[idx] * dt * dt
    p_imu = scan.points @ extrinsic.R.T + extrinsic.t
    world = np.einsum("nij,nj->ni", Rt, p_imu) + pt
    R_end, p_end = Rs[-1], ps[-1]
    p_imu_end = (world - p_end) @ R_end
    return (p_imu_end - extrinsic.t) @ extrinsic.R


@dataclass
class PointToPlaneResidual:
    world_point: np.ndarray
    plane: PlaneFeature
    residual: float
    jacobian: np.ndarray
    noise: float


@dataclass
class ResidualSet:
    """Accepted point-to-plane associations for one linearisation point."""
    world_points: np.ndarray
    normals: np.ndarray
    centers: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray     # (m, 6) over (d_theta, d_p)
    noise: np.ndarray
    source_index: np.ndarray
    plane_ids: np.ndarray    # node-store rows of the associated planes
    n_queried: int = 0
    vmap: Optional[VoxelMap] = None

    def __len__(self):
        return int(self.residual.shape[0])

    def __getitem__(self, i):
        plane = self.vmap.plane_at(int(self.plane_ids[i])) if self.vmap is not None else None
        return PointToPlaneResidual(self.world_points[i], plane, float(self.residual[i]),
                                    self.jacobian[i], float(self.noise[i]))


def build_residuals(state: StateVector, points, vmap: VoxelMap, gate=0.3, beam_var=0.02 ** 2,
                    extrinsic: Extrinsic = IDENTITY, sigma_gate=3.0) -> ResidualSet:
    """Associate LiDAR-frame points to map planes and linearise.

    Points without a planar leaf, beyond ``gate`` metres, or failing the
    ``sigma_gate`` Mahalanobis test are skipped.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    p_imu = pts @ extrinsic.R.T + extrinsic.t
    R = state.rotation
    world = p_imu @ R.T + state.position
    sid = vmap.query_sids(world)
    sel = np.flatnonzero(sid >= 0)
    if sel.size == 0:
        return _empty_set(len(pts))
    n, c, ncov, cvar = vmap.plane_arrays(sid[sel])
    q = world[sel]
    d = q - c
    r = np.einsum("ij,ij->i", n, d)
    noise = beam_var + cvar + np.einsum("ij,ijk,ik->i", d, ncov, d)
    ok = (np.abs(r) < gate) & (r * r < sigma_gate ** 2 * noise)
    keep = sel[ok]
    n, c, q, r, noise, ps = n[ok], c[ok], q[ok], r[ok], noise[ok], sid[keep]
    pk = p_imu[keep]
    # dr/dtheta = -n^T R [p]x  ==  (R^T n) x p
    nb = n @ R
    J = np.empty((keep.shape[0], 6))
    J[:, :3] = np.cross(pk, nb)
    J[:, 3:] = n
    return ResidualSet(q, n, c, r, J, noise, keep, ps, len(pts), vmap)


def _empty_set(nq):
    z3 = np.zeros((0, 3))
    return ResidualSet(z3, z3, z3, np.zeros(0), np.zeros((0, 6)), np.zeros(0),
                       np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), nq)


def lidar_builder(points, vmap, gate=0.3, beam_var=0.02 ** 2, extrinsic=IDENTITY, sigma_gate=3.0):
    def build(x):
        rs = build_residuals(x, points, vmap, gate, beam_var, extrinsic, sigma_gate)
        return Measurement(rs.residual, rs.jacobian, rs.noise, extra=rs)
    return build


@dataclass
class LidarUpdateResult:
    state: StateVector
    covariance: np.ndarray
    converged: bool
    normals: np.ndarray
    residuals: Optional[ResidualSet]
    iterations: int


def lidar_iterated_update(state: StateVector, P, residual_builder, epsilon=1e-4, max_iters=5):
    """Iterated LiDAR update; also returns the last iteration's normals."""
    res: UpdateResult = iterated_update(state, P, residual_builder, epsilon, max_iters)
    rs = res.measurement.extra if res.measurement is not None else None
    m = 0 if rs is None else len(rs)
    if m < 6:
        warnings.warn(f"only {m} LiDAR residuals; update is underconstrained", UnderconstrainedWarning)
    normals = rs.normals if rs is not None else np.zeros((0, 3))
    return LidarUpdateResult(res.state, res.covariance, res.converged, normals, rs, res.iterations)
