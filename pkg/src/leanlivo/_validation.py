"""Input validation helpers shared by the public entry points.

These mirror the scikit-learn ``check_*`` helpers: they coerce inputs to
float64 numpy arrays of the expected shape and raise ``ValueError`` with
a readable message otherwise.
"""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_points(points, *, name="points", allow_empty=True):
    """Return ``points`` as a finite (N, 3) float64 array."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        if not allow_empty:
            raise ValueError(f"{name} must not be empty")
        return np.zeros((0, 3))
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    arr = check_array(arr, dtype=np.float64, ensure_all_finite=True,
                      input_name=name)
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


def check_vector(v, size=3, *, name="vector"):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != size:
        raise ValueError(f"{name} must have {size} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_unit_vectors(normals, *, name="normals", atol=1e-6):
    arr = check_points(normals, name=name)
    if arr.shape[0] and np.any(np.abs(np.linalg.norm(arr, axis=1) - 1.0) > atol):
        raise ValueError(f"{name} must be unit length")
    return arr


def check_rotation(R, *, name="rotation", atol=1e-6):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError(f"{name} must be a finite 3x3 matrix")
    if np.abs(R @ R.T - np.eye(3)).max() > atol or np.linalg.det(R) < 0:
        raise ValueError(f"{name} is not a proper rotation")
    return R


def check_increasing(t, *, name="timestamps", strict=True):
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size > 1:
        d = np.diff(t)
        bad = np.flatnonzero(d <= 0) if strict else np.flatnonzero(d < 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise ValueError(f"{name} not increasing at index {i} (t={t[i]!r})")
    return t
