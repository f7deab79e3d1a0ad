"""Analytic trajectories: smooth paths, speed ramps from rest, exact IMU kinematics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

KINDS = ("line", "circle", "lissajous", "corridor-walk", "room-loop", "revisit-loop",
         "ellipse", "segments")

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class SpeedRamp:
    """Raised-cosine ramp from rest to ``rate`` over ``t_ramp`` seconds.

    Returns the travelled parameter (arc length or angle) and its first two
    derivatives.
    """
    rate: float
    t_ramp: float = 2.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        T = self.t_ramp
        v = self.rate
        if T <= 0:
            return v * t, np.full(t.shape, v), np.zeros(t.shape)
        w = np.pi / T
        tr = np.minimum(t, T)
        s = np.where(t < T, v * (0.5 * tr - np.sin(w * tr) / (2 * w)), v * (t - 0.5 * T))
        sd = np.where(t < T, 0.5 * v * (1 - np.cos(w * tr)), v)
        sdd = np.where(t < T, 0.5 * v * w * np.sin(w * tr), 0.0)
        return s, sd, sdd

    def time_at(self, s):
        """Inverse for the constant-rate part (s past the ramp)."""
        return s / self.rate + 0.5 * self.t_ramp


@dataclass
class SegmentPath:
    """Planar path of straights and smooth turns, parameterised by arc length.

    A turn of angle A over length L has curvature
    ``(A / L) * (1 - cos(2 pi s / L))``, which starts and ends at zero with
    zero slope, so the path is C3.
    """
    segments: Sequence[Tuple]
    start: Tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    _table: list = field(default=None, repr=False)

    def __post_init__(self):
        table = []
        s0, xy, psi = 0.0, np.asarray(self.start, dtype=float), float(self.heading)
        for seg in self.segments:
            if seg[0] == "straight":
                L = float(seg[1])
                table.append(("straight", s0, L, xy.copy(), psi, 0.0))
                xy = xy + L * np.array([np.cos(psi), np.sin(psi)])
            elif seg[0] == "turn":
                A, radius = float(seg[1]), float(seg[2])
                L = abs(A) * radius
                table.append(("turn", s0, L, xy.copy(), psi, A))
                xy = xy + self._turn_offset(np.array([L]), L, psi, A)[0]
                psi = psi + A
            else:
                raise ValueError(f"unknown segment {seg[0]!r}")
            s0 += L
        self._table = table
        self.length = s0

    @staticmethod
    def _turn_heading(sig, L, psi0, A):
        return psi0 + (A / L) * (sig - (L / (2 * np.pi)) * np.sin(2 * np.pi * sig / L))

    @classmethod
    def _turn_offset(cls, sig, L, psi0, A):
        # Gauss-Legendre on [0, sig] of (cos psi, sin psi)
        half = 0.5 * sig[:, None]
        x = half * (_GL_X[None, :] + 1.0)
        psi = cls._turn_heading(x, L, psi0, A)
        dx = (np.cos(psi) * _GL_W).sum(axis=1) * half[:, 0]
        dy = (np.sin(psi) * _GL_W).sum(axis=1) * half[:, 0]
        return np.column_stack([dx, dy])

    def evaluate(self, s):
        """(xy, heading, curvature) at arc lengths ``s`` (clamped to the path)."""
        s = np.clip(np.asarray(s, dtype=float).reshape(-1), 0.0, self.length)
        xy = np.empty((s.shape[0], 2))
        psi = np.empty(s.shape[0])
        kappa = np.zeros(s.shape[0])
        starts = np.array([row[1] for row in self._table])
        which = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(self._table) - 1)
        for j in np.unique(which):
            kind, s0, L, xy0, psi0, A = self._table[j]
            m = which == j
            sig = s[m] - s0
            if kind == "straight":
                xy[m] = xy0 + sig[:, None] * np.array([np.cos(psi0), np.sin(psi0)])
                psi[m] = psi0
            else:
                xy[m] = xy0 + self._turn_offset(sig, L, psi0, A)
                psi[m] = self._turn_heading(sig, L, psi0, A)
                kappa[m] = (A / L) * (1 - np.cos(2 * np.pi * sig / L))
        return xy, psi, kappa


@dataclass
class ParametricPath:
    """Closed analytic curve c(phi) in the plane: ellipse or Lissajous figure."""
    kind: str = "ellipse"
    a: float = 10.0
    b: float = 6.0
    center: Tuple[float, float] = (0.0, 0.0)
    phase: float = 0.0      # curve parameter at the start of the path

    def derivs(self, phi):
        phi = np.asarray(phi, dtype=float) + self.phase
        cx, cy = self.center
        if self.kind in ("ellipse", "circle"):
            a, b = (self.a, self.a) if self.kind == "circle" else (self.a, self.b)
            # phase 0 is the bottom of the loop, heading +x
            c = np.column_stack([cx + a * np.sin(phi), cy - b * np.cos(phi)])
            d1 = np.column_stack([a * np.cos(phi), b * np.sin(phi)])
            d2 = np.column_stack([-a * np.sin(phi), b * np.cos(phi)])
        elif self.kind == "lissajous":
            c = np.column_stack([cx + self.a * np.sin(phi), cy + self.b * np.sin(2 * phi)])
            d1 = np.column_stack([self.a * np.cos(phi), 2 * self.b * np.cos(2 * phi)])
            d2 = np.column_stack([-self.a * np.sin(phi), -4 * self.b * np.sin(2 * phi)])
        else:
            raise ValueError(f"unknown curve {self.kind!r}")
        return c, d1, d2

    def perimeter(self, n=20000):
        phi = np.linspace(0, 2 * np.pi, n + 1)
        _, d1, _ = self.derivs(phi)
        sp = np.linalg.norm(d1, axis=1)
        return float(np.sum(0.5 * (sp[1:] + sp[:-1])) * (2 * np.pi / n))


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1], R[..., 1, 0], R[..., 1, 1], R[..., 2, 2] = c, -s, s, c, 1
    return R


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 2], R[..., 2, 0], R[..., 2, 2], R[..., 1, 1] = c, s, -s, c, 1
    return R


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1], R[..., 1, 2], R[..., 2, 1], R[..., 2, 2], R[..., 0, 0] = c, -s, s, c, 1
    return R


@dataclass(frozen=True)
class Kinematics:
    t: np.ndarray
    rotation: np.ndarray          # (N, 3, 3) world-from-body
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray      # world frame, gravity excluded
    angular_velocity: np.ndarray  # body frame


@dataclass
class TrajectorySpec:
    """Analytic body trajectory.

    Horizontal motion follows ``path`` at a ramped rate; height is
    ``height + bob * (1 - cos(w t))`` and pitch/roll wobble with the same
    raised form, so every trajectory starts at rest.
    """
    kind: str
    duration: float
    path: object
    ramp: SpeedRamp
    height: float = 1.0
    bob: float = 0.0
    bob_freq: float = 0.5
    pitch_amp: float = 0.0
    roll_amp: float = 0.0
    wobble_freq: float = 0.3
    yaw_offset: float = 0.0
    imu_hz: float = 200.0
    lidar_hz: float = 10.0
    camera_hz: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def _planar(self, t):
        u, ud, udd = self.ramp(t)
        if isinstance(self.path, SegmentPath):
            xy, psi, kappa = self.path.evaluate(u)
            T = np.column_stack([np.cos(psi), np.sin(psi)])
            N = np.column_stack([-np.sin(psi), np.cos(psi)])
            at_end = u >= self.path.length
            ud = np.where(at_end, 0.0, ud)
            udd = np.where(at_end, 0.0, udd)
            vel = ud[:, None] * T
            acc = udd[:, None] * T + (ud * ud * kappa)[:, None] * N
            return xy, vel, acc, psi, ud * kappa
        c, d1, d2 = self.path.derivs(u)
        vel = d1 * ud[:, None]
        acc = d2 * (ud * ud)[:, None] + d1 * udd[:, None]
        psi = np.arctan2(d1[:, 1], d1[:, 0])
        k_phi = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.einsum("ij,ij->i", d1, d1)
        return c, vel, acc, psi, k_phi * ud

    def kinematics(self, t) -> Kinematics:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        xy, vxy, axy, psi, dpsi = self._planar(t)
        psi = psi + self.yaw_offset
        wb, wo = 2 * np.pi * self.bob_freq, 2 * np.pi * self.wobble_freq
        z = self.height + self.bob * (1 - np.cos(wb * t))
        vz = self.bob * wb * np.sin(wb * t)
        az = self.bob * wb * wb * np.cos(wb * t)
        th = self.pitch_amp * (1 - np.cos(wo * t))
        dth = self.pitch_amp * wo * np.sin(wo * t)
        rho = self.roll_amp * (1 - np.cos(1.3 * wo * t))
        drho = self.roll_amp * 1.3 * wo * np.sin(1.3 * wo * t)
        Rz, Ry, Rx = _rz(psi), _ry(th), _rx(rho)
        R = Rz @ Ry @ Rx
        # body rates of the ZYX composition
        ez = np.zeros((t.shape[0], 3))
        ez[:, 2] = dpsi
        ey = np.zeros((t.shape[0], 3))
        ey[:, 1] = dth
        RxT = np.swapaxes(Rx, 1, 2)
        RyT = np.swapaxes(Ry, 1, 2)
        w = np.einsum("nij,nj->ni", RxT, np.einsum("nij,nj->ni", RyT, ez) + ey)
        w[:, 0] += drho
        pos = np.column_stack([xy, z])
        vel = np.column_stack([vxy, vz])
        acc = np.column_stack([axy, az])
        return Kinematics(t, R, pos, vel, acc, w)

    def pose(self, t):
        k = self.kinematics(t)
        return k.rotation, k.position

    def imu_times(self):
        n = int(np.floor(self.duration * self.imu_hz + 1e-9))
        return np.arange(n + 1) / self.imu_hz

    def scan_windows(self):
        period = 1.0 / self.lidar_hz
        n = int(np.floor(self.duration * self.lidar_hz + 1e-9))
        return [(k * period, (k + 1) * period) for k in range(n)]

    def camera_times(self):
        period = 1.0 / self.camera_hz
        n = int(np.floor(self.duration * self.camera_hz + 1e-9))
        return (np.arange(n) + 1) * period

    def distance_travelled(self, t):
        u, *_ = self.ramp(np.asarray(t, dtype=float))
        if isinstance(self.path, SegmentPath):
            return np.minimum(u, self.path.length)
        n = 4000
        ts = np.linspace(0, float(np.max(t)), n)
        v = np.linalg.norm(self._planar(ts)[1], axis=1)
        cum = np.concatenate([[0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(ts))])
        return np.interp(t, ts, cum)
