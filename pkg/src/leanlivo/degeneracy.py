"""LiDAR translational degeneracy: normalised constraint spectrum + hysteresis."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_unit_vectors

INV_SQRT3 = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class ConstraintSpectrum:
    sigma_min: float
    sigma_mid: float
    sigma_max: float
    valid: bool = True

    def as_array(self):
        return np.array([self.sigma_min, self.sigma_mid, self.sigma_max])


INVALID_SPECTRUM = ConstraintSpectrum(0.0, 0.0, 0.0, valid=False)


def constraint_matrix(normals, weights=None):
    n = np.asarray(normals, dtype=float)
    if weights is None:
        return n.T @ n
    w = np.asarray(weights, dtype=float)
    return (n * w[:, None]).T @ n


def constraint_spectrum(normals, weights=None) -> ConstraintSpectrum:
    """Unit-norm singular values of sum_i w_i n_i n_i^T, ascending.

    An empty normal set gives the invalid spectrum (0, 0, 0), which callers
    treat as maximally degenerate.
    """
    n = check_unit_vectors(normals)
    if n.shape[0] == 0:
        return INVALID_SPECTRUM
    if weights is not None:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.shape[0] != n.shape[0] or np.any(weights < 0):
            raise ValueError("weights must be non-negative, one per normal")
    M = constraint_matrix(n, weights)
    # M is symmetric PSD: singular values are its eigenvalues
    s = np.clip(np.linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)
    norm = np.linalg.norm(s)
    if norm == 0.0:
        return INVALID_SPECTRUM
    s = s / norm
    return ConstraintSpectrum(float(s[0]), float(s[1]), float(s[2]))


@dataclass
class DegeneracyState:
    threshold: float = 0.07
    required_consecutive: int = 3
    flag: bool = False
    below_count: int = 0
    frame: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=4096))


def update_degeneracy(state: DegeneracyState, spectrum: ConstraintSpectrum) -> DegeneracyState:
    """Advance the hysteresis counter by one LiDAR frame (mutates ``state``)."""
    if not spectrum.valid or spectrum.sigma_min < state.threshold:
        state.below_count += 1
    else:
        state.below_count = 0
    state.flag = state.below_count >= state.required_consecutive
    state.history.append((state.frame, spectrum.sigma_min))
    state.frame += 1
    return state


class ConstraintSpectrumTransformer(TransformerMixin, BaseEstimator):
    """Map a sequence of normal sets to their (min, mid, max) spectra.

    Stateless; ``fit`` only validates. Each element of ``X`` is an (N, 3)
    array of unit normals.
    """

    def fit(self, X, y=None):
        self.n_features_out_ = 3
        return self

    def transform(self, X):
        return np.array([constraint_spectrum(n).as_array() for n in X]).reshape(-1, 3)


class DegeneracyDetector(BaseEstimator):
    """Hysteresis flag over a time-ordered sequence of spectra."""

    def __init__(self, threshold=0.07, required_consecutive=3):
        self.threshold = threshold
        self.required_consecutive = required_consecutive

    def fit(self, X=None, y=None):
        if not self.threshold > 0 or self.required_consecutive < 1:
            raise ValueError("threshold must be > 0 and required_consecutive >= 1")
        return self

    def predict(self, X):
        """``X``: (T, 3) spectra in time order (NaN/zero row = invalid)."""
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        st = DegeneracyState(self.threshold, self.required_consecutive)
        out = np.zeros(X.shape[0], dtype=bool)
        for i, row in enumerate(X):
            valid = bool(np.all(np.isfinite(row)) and np.linalg.norm(row) > 0)
            spec = ConstraintSpectrum(*row.tolist(), valid=valid) if valid else INVALID_SPECTRUM
            out[i] = update_degeneracy(st, spec).flag
        return out
