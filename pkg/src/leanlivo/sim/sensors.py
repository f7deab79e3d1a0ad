"""Sensor models: IMU from analytic kinematics, ray-cast LiDAR, rendered camera."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from ..camera import CameraModel, Image
from ..dataset import ImuStream
from ..lidar import LidarScan
from ..state import GRAVITY
from .trajectory import TrajectorySpec
from .world import WorldModel

STREAM_IMU = 1
STREAM_LIDAR = 2
STREAM_CAMERA = 3
STREAM_BIAS = 4


def rng_for(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed on (seed, stream, index)."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)], dtype=np.uint64)
    counter = np.array([0, 0, int(index), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class SensorNoiseSpec:
    """Noise densities are continuous-time (per sqrt(Hz)); biases are constants."""
    lidar_range_sigma: float = 0.02
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias_rw: float = 1e-5
    accel_bias_rw: float = 1e-4
    gyro_bias: Tuple[float, float, float] = (0.002, -0.001, 0.0015)
    accel_bias: Tuple[float, float, float] = (0.02, -0.015, 0.01)
    image_noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("lidar_range_sigma", "gyro_noise", "accel_noise", "gyro_bias_rw",
                     "accel_bias_rw", "image_noise_sigma"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def noiseless(cls, seed=0):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0, seed)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


_GOLD1 = 0.6180339887498949
_GOLD2 = 0.7548776662466927


@dataclass(frozen=True)
class LidarPattern:
    """Ray directions in the LiDAR frame and the firing slot of each ray.

    With ``shift`` set, scan ``index`` offsets the pattern by a
    low-discrepancy fraction of its angular spacing, so successive scans
    interleave instead of resampling the same rays.
    """
    directions: np.ndarray
    slot: np.ndarray
    n_slots: int
    name: str = "custom"
    kind: str = "custom"
    angles: Optional[np.ndarray] = None   # per-ray (a, b) generating angles
    steps: Tuple[float, float] = (0.0, 0.0)
    shift: bool = False

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        if not np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-9):
            raise ValueError("pattern directions must be unit length")
        object.__setattr__(self, "directions", d)

    @staticmethod
    def _spin_dirs(az, el):
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], -1)

    @staticmethod
    def _cone_dirs(theta, phi):
        return np.column_stack([np.cos(theta), np.sin(theta) * np.cos(phi),
                                np.sin(theta) * np.sin(phi)])

    def directions_at(self, index=0):
        if not self.shift or self.angles is None:
            return self.directions
        f1 = (index * _GOLD1) % 1.0
        f2 = (index * _GOLD2) % 1.0 - 0.5
        a, b = self.angles[:, 0], self.angles[:, 1]
        if self.kind == "spinning":
            return self._spin_dirs(a + f1 * self.steps[0], b + f2 * self.steps[1])
        if self.kind == "narrow":
            return self._cone_dirs(a, b + 2 * np.pi * f1)
        return self.directions

    @classmethod
    def spinning(cls, lines=32, elevation=(-15.0, 15.0), azimuth_step=2.0, shift=True):
        """360-degree multi-line pattern, one firing slot per azimuth column."""
        el = np.deg2rad(np.linspace(elevation[0], elevation[1], lines))
        n_az = int(round(360.0 / azimuth_step))
        az = np.deg2rad(np.arange(n_az) * azimuth_step - 180.0)
        A, E = np.meshgrid(az, el, indexing="ij")
        d = cls._spin_dirs(A, E).reshape(-1, 3)
        slot = np.repeat(np.arange(n_az), lines)
        el_step = float(el[1] - el[0]) if lines > 1 else 0.0
        return cls(d, slot, n_az, f"spinning-{lines}", "spinning",
                   np.column_stack([A.ravel(), E.ravel()]), (np.deg2rad(azimuth_step), el_step), shift)

    @classmethod
    def narrow(cls, fov=70.0, n=6000, shift=True):
        """Forward-looking cone of ``fov`` degrees sampled on a golden-angle spiral."""
        half = np.deg2rad(fov / 2)
        k = np.arange(n)
        r = np.sqrt((k + 0.5) / n)
        theta = r * half
        phi = k * np.pi * (3 - np.sqrt(5))
        d = cls._cone_dirs(theta, phi)
        return cls(d, k.copy(), n, f"narrow-{fov:g}", "narrow", np.column_stack([theta, phi]),
                   (0.0, 0.0), shift)


def generate_imu(spec: TrajectorySpec, noise: SensorNoiseSpec = None) -> ImuStream:
    """Gyro = body rates; accel = R^T (a - g); plus white noise and biases."""
    noise = noise or SensorNoiseSpec.noiseless()
    t = spec.imu_times()
    k = spec.kinematics(t)
    gyro = k.angular_velocity.copy()
    accel = np.einsum("nji,nj->ni", k.rotation, k.acceleration - GRAVITY)
    dt = 1.0 / spec.imu_hz
    n = t.shape[0]
    rng = rng_for(noise.seed, STREAM_IMU)
    white = rng.standard_normal((n, 6))
    walk = rng_for(noise.seed, STREAM_BIAS).standard_normal((n, 6))
    bg = np.asarray(noise.gyro_bias) + np.cumsum(walk[:, :3], axis=0) * noise.gyro_bias_rw * np.sqrt(dt)
    ba = np.asarray(noise.accel_bias) + np.cumsum(walk[:, 3:], axis=0) * noise.accel_bias_rw * np.sqrt(dt)
    gyro = gyro + bg + white[:, :3] * (noise.gyro_noise / np.sqrt(dt))
    accel = accel + ba + white[:, 3:] * (noise.accel_noise / np.sqrt(dt))
    return ImuStream(t, gyro, accel)


def raycast_lidar(world: WorldModel, pose, pattern: LidarPattern, noise: SensorNoiseSpec = None,
                  t_start=0.0, t_end=0.1, max_range=50.0, index=0) -> LidarScan:
    """Simulate one scan.

    ``pose`` is either a fixed world-from-LiDAR (R, p) or a callable mapping
    an array of times to stacked (R, p); each firing slot uses the pose at
    its own timestamp. Misses are omitted.
    """
    noise = noise or SensorNoiseSpec.noiseless()
    slot_t = t_start + (np.arange(pattern.n_slots) + 1.0) / pattern.n_slots * (t_end - t_start)
    times = slot_t[pattern.slot]
    dirs = pattern.directions_at(index)
    if callable(pose):
        Rs, ps = pose(slot_t)
        R = Rs[pattern.slot]
        p = ps[pattern.slot]
        dirs_w = np.einsum("nij,nj->ni", R, dirs)
    else:
        R0, p0 = pose
        R0 = np.asarray(R0, dtype=float)
        p = np.asarray(p0, dtype=float)
        dirs_w = dirs @ R0.T
    rng_t, hit = world.raycast(p, dirs_w, max_range)
    eps = rng_for(noise.seed, STREAM_LIDAR, index).standard_normal(rng_t.shape[0])
    ok = hit >= 0
    ranges = rng_t[ok] + noise.lidar_range_sigma * eps[ok]
    pts = dirs[ok] * ranges[:, None]
    order = np.argsort(times[ok], kind="stable")
    return LidarScan(times[ok][order], pts[order], float(t_start), float(t_end))


def render_camera(world: WorldModel, pose, camera: CameraModel, noise: SensorNoiseSpec = None,
                  index=0, timestamp=0.0, quantize=True, max_range=200.0) -> Image:
    """Ray-cast every pixel centre; ``pose`` is world-from-IMU (R, p).

    With ``quantize`` the intensities are rounded to 8 bits, matching what
    the on-disk dataset stores.
    """
    arr = render_array(world, pose, camera, noise, index, quantize, max_range)
    return Image(arr / 255.0 if quantize else arr, timestamp)


_RAY_CACHE = {}


def _camera_rays(camera: CameraModel):
    key = (camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height)
    rays = _RAY_CACHE.get(key)
    if rays is None:
        u, v = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
        rays = camera.pixel_rays(np.column_stack([u.ravel(), v.ravel()]).astype(float))
        rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        _RAY_CACHE[key] = rays
    return rays


def render_array(world, pose, camera: CameraModel, noise=None, index=0, quantize=True,
                 max_range=200.0):
    """Rendered intensities: uint8 grid when ``quantize`` else floats in [0, 1]."""
    noise = noise or SensorNoiseSpec.noiseless()
    R_wi, p_wi = pose
    R_wc, t_wc = camera.camera_pose(np.asarray(R_wi, dtype=float), np.asarray(p_wi, dtype=float))
    dirs = _camera_rays(camera) @ R_wc.T
    axis = R_wc[:, 2]
    half = np.arccos(np.min(_camera_rays(camera)[:, 2]))
    ids = world.candidates_cone(t_wc, axis, half, max_range)
    rng_t, hit = world.raycast(t_wc, dirs, max_range, plane_ids=ids)
    pts = t_wc + np.where(np.isfinite(rng_t), rng_t, 0.0)[:, None] * dirs
    val = world.shade(pts, hit).reshape(camera.height, camera.width)
    if noise.image_noise_sigma > 0:
        val = val + noise.image_noise_sigma * rng_for(noise.seed, STREAM_CAMERA, index).standard_normal(val.shape)
    val = np.clip(val, 0.0, 1.0)
    if quantize:
        return np.round(val * 255.0).astype(np.uint8)
    return val
