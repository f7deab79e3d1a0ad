"""Manifold filter state, box-plus/box-minus and IMU forward propagation.

The error state is 18-dimensional and ordered

    (d_theta, d_p, d_v, d_bg, d_ba, d_g)

with the rotation perturbed on the right, ``R = R_hat @ Exp(d_theta)``.
Every Jacobian in the package is derived from this convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

DIM = 18
NOISE_DIM = 12

ROT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
GRAV = slice(15, 18)

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_DT = 0.1


class InvalidArgumentError(ValueError):
    """Non-finite or otherwise malformed argument."""


class PropagationGapError(ValueError):
    """Propagation interval is non-positive or too long to trust."""


def _frozen(a, shape):
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateVector:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise InvalidArgumentError("rotation must be a finite 3x3 matrix")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            R = so3.orthonormalize(R)
        object.__setattr__(self, "rotation", _frozen(R, (3, 3)))
        for name in ("position", "velocity", "gyro_bias", "accel_bias", "gravity"):
            v = _frozen(getattr(self, name), (3,))
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in
             ("rotation", "position", "velocity", "gyro_bias", "accel_bias", "gravity")}
        d.update(kw)
        return StateVector(**d)

    def pose(self):
        """4x4 world-from-IMU transform."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "angular_velocity", _frozen(self.angular_velocity, (3,)))
        object.__setattr__(self, "linear_acceleration", _frozen(self.linear_acceleration, (3,)))


def boxplus(x: StateVector, d) -> StateVector:
    d = np.asarray(d, dtype=float)
    if d.shape != (DIM,) or not np.all(np.isfinite(d)):
        raise InvalidArgumentError("error-state increment must be a finite 18-vector")
    R = x.rotation @ so3.exp(d[ROT])
    # re-normalise so repeated composition never leaves SO(3)
    R = so3.orthonormalize(R)
    return StateVector(
        rotation=R,
        position=x.position + d[POS],
        velocity=x.velocity + d[VEL],
        gyro_bias=x.gyro_bias + d[BG],
        accel_bias=x.accel_bias + d[BA],
        gravity=x.gravity + d[GRAV],
    )


def boxminus(y: StateVector, x: StateVector) -> np.ndarray:
    d = np.empty(DIM)
    d[ROT] = so3.log(x.rotation.T @ y.rotation)
    d[POS] = y.position - x.position
    d[VEL] = y.velocity - x.velocity
    d[BG] = y.gyro_bias - x.gyro_bias
    d[BA] = y.accel_bias - x.accel_bias
    d[GRAV] = y.gravity - x.gravity
    return d


def imu_process_noise(dt, gyro=1e-3, accel=1e-2, gyro_bias=1e-5, accel_bias=1e-4):
    """Discrete noise covariance Q for one propagation step.

    Arguments are continuous noise densities (per sqrt(Hz)); the division by
    ``dt`` pairs with the ``dt``-scaled noise Jacobian so that the injected
    covariance per step is ``density**2 * dt``.
    """
    q = np.concatenate([np.full(3, gyro ** 2), np.full(3, accel ** 2),
                        np.full(3, gyro_bias ** 2), np.full(3, accel_bias ** 2)])
    return np.diag(q / dt)


def transition(x: StateVector, u: ImuSample, dt: float, w=None) -> StateVector:
    """Discrete forward-Euler transition ``x [+] dt * f(x, u, w)``."""
    if w is None:
        w = np.zeros(NOISE_DIM)
    omega = u.angular_velocity - x.gyro_bias - w[0:3]
    acc = u.linear_acceleration - x.accel_bias - w[3:6]
    d = np.empty(DIM)
    d[ROT] = omega * dt
    d[POS] = x.velocity * dt
    d[VEL] = (x.rotation @ acc + x.gravity) * dt
    d[BG] = w[6:9] * dt
    d[BA] = w[9:12] * dt
    d[GRAV] = 0.0
    return boxplus(x, d)


def transition_jacobians(x: StateVector, u: ImuSample, dt: float):
    """Error-state Jacobians (F_x, F_w) of :func:`transition` at zero noise."""
    return _jacobians(x.rotation, x.gyro_bias, x.accel_bias,
                      u.angular_velocity, u.linear_acceleration, dt)


def _jacobians(R, bg, ba, gyro, acc, dt):
    omega = gyro - bg
    a = acc - ba
    phi = omega * dt
    Jr = so3.right_jacobian(phi)
    F = np.eye(DIM)
    F[ROT, ROT] = so3.exp(-phi)
    F[ROT, BG] = -Jr * dt
    F[POS, VEL] = np.eye(3) * dt
    F[VEL, ROT] = -R @ so3.skew(a) * dt
    F[VEL, BA] = -R * dt
    F[VEL, GRAV] = np.eye(3) * dt
    Fw = np.zeros((DIM, NOISE_DIM))
    Fw[ROT, 0:3] = -Jr * dt
    Fw[VEL, 3:6] = -R * dt
    Fw[BG, 6:9] = np.eye(3) * dt
    Fw[BA, 9:12] = np.eye(3) * dt
    return F, Fw


def symmetrize(P):
    return 0.5 * (P + P.T)


def clamp_psd(P, floor=-1e-9):
    """Symmetrise, and clip eigenvalues to zero if any fall below ``floor``."""
    P = symmetrize(P)
    w, V = np.linalg.eigh(P)
    if w[0] < floor:
        P = (V * np.maximum(w, 0.0)) @ V.T
        P = symmetrize(P)
    return P


def propagate(x: StateVector, P, u: ImuSample, dt: float, Q):
    """One IMU propagation step of state and covariance.

    Raises :class:`PropagationGapError` unless ``0 < dt < 0.1``.
    """
    if not np.isfinite(dt) or dt <= 0.0 or dt >= MAX_DT:
        raise PropagationGapError(f"propagation interval {dt!r} s out of range (0, {MAX_DT})")
    F, Fw = transition_jacobians(x, u, dt)
    x_new = transition(x, u, dt)
    P_new = F @ P @ F.T + Fw @ Q @ Fw.T
    return x_new, symmetrize(P_new)


def default_covariance(rot=1e-6, pos=1e-6, vel=1e-4, gyro_bias=1e-4, accel_bias=1e-3,
                       gravity=1e-6):
    return np.diag(np.repeat([rot, pos, vel, gyro_bias, accel_bias, gravity], 3))
