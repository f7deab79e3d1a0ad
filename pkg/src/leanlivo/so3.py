"""Rotation group helpers (SO(3)) used across the estimator.

All rotations are 3x3 numpy arrays. Tangent vectors are rotation vectors
(axis times angle, radians).
"""
from __future__ import annotations

import numpy as np

_SMALL = 1e-10


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v):
    """Stack of skew matrices for an (N, 3) array."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp(phi):
    """Rodrigues formula: rotation vector -> rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = skew(phi)
    if theta < 1e-8:
        # second-order series is exact to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def exp_batch(phi):
    """Vectorised :func:`exp` over an (N, 3) array, returns (N, 3, 3)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = np.einsum("...i,...i->...", phi, phi)
    theta = np.sqrt(theta2)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = skew_batch(phi)
    KK = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * KK


def log(R):
    """Inverse of :func:`exp` with the angle in [0, pi].

    At exactly pi the axis sign is ambiguous; the axis is taken from the
    largest diagonal entry of (R + I) / 2 and flipped so that its
    largest-magnitude component is positive. This keeps the result
    deterministic.
    """
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        # R ~ I + K + K^2/2; the antisymmetric part carries phi to third order
        return 0.5 * w * (1.0 + theta * theta / 6.0)
    if np.pi - theta > 1e-5:
        return theta / (2.0 * np.sin(theta)) * w
    B = 0.5 * (R + np.eye(3))
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(max(B[i, i], _SMALL))
    # refine direction with the antisymmetric part where it is informative
    if w @ axis < 0.0:
        axis = -axis
    if abs(w @ axis) < 1e-12:
        k = int(np.argmax(np.abs(axis)))
        if axis[k] < 0:
            axis = -axis
    axis /= np.linalg.norm(axis)
    return theta * axis


def right_jacobian(phi):
    """J_r such that Exp(phi + d) ~= Exp(phi) Exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < 1e-12:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    a = (1.0 - np.cos(theta)) / theta2
    b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - a * K + b * (K @ K)


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < 1e-12:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    theta = np.sqrt(theta2)
    c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def orthonormalize(R):
    """Project onto SO(3) (nearest rotation in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def angle(R):
    """Rotation angle of R in radians."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)))


def rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
