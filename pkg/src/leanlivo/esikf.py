"""Iterated error-state Kalman update on the 18-dim manifold state.

Measurement Jacobians only ever touch a leading block of the error state
(the pose, for both LiDAR and camera), so the gain is computed as

    K = P[:, :k] (I + A P_kk)^-1 H^T R^-1,    A = H^T R^-1 H

which is algebraically the textbook ``P H^T (H P H^T + R)^-1`` but needs
neither an m x m inverse nor the inverse of ``P``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import so3
from .state import DIM, ROT, StateVector, boxminus, boxplus, clamp_psd

log = logging.getLogger(__name__)


@dataclass
class Measurement:
    """Stacked linearised measurement at the current iterate.

    ``residual`` is h(x) - z so that the update drives it towards zero;
    ``jacobian`` has shape (m, k) over the first ``k`` error-state entries.
    """
    residual: np.ndarray
    jacobian: np.ndarray
    variance: np.ndarray
    extra: Any = None

    def __len__(self):
        return int(self.residual.shape[0])


@dataclass
class UpdateResult:
    state: StateVector
    covariance: np.ndarray
    converged: bool
    iterations: int
    measurement: Optional[Measurement] = None
    history: list = field(default_factory=list)


def _prior_jacobian_inv(delta):
    """J^-1 where (x [+] dx) [-] x_prior ~= delta + J dx."""
    Jinv = np.eye(DIM)
    Jinv[ROT, ROT] = so3.right_jacobian(delta[ROT])
    return Jinv


def iterated_update(x_prior: StateVector, P_prior, builder: Callable[[StateVector], Optional[Measurement]],
                    epsilon=1e-4, max_iters=5, x_start: Optional[StateVector] = None) -> UpdateResult:
    """Iterated Kalman update.

    ``builder(x)`` relinearises every iteration. Iteration stops once the
    step norm falls below ``epsilon`` or after ``max_iters`` iterations.
    The posterior covariance is ``(I - K H) P`` with ``P`` the prior
    covariance projected onto the last iterate's tangent space.
    """
    x = x_prior if x_start is None else x_start
    P_prior = np.asarray(P_prior, dtype=float)
    converged = False
    meas = None
    P_post = P_prior
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        meas = builder(x)
        delta = boxminus(x, x_prior)
        Jinv = _prior_jacobian_inv(delta)
        P = Jinv @ P_prior @ Jinv.T
        prior_pull = Jinv @ delta
        if meas is None or len(meas) == 0:
            dx = -prior_pull
            P_post = P
            history.append(0.0)
        else:
            H = np.asarray(meas.jacobian, dtype=float)
            k = H.shape[1]
            Rinv = 1.0 / np.asarray(meas.variance, dtype=float)
            HtRinv = H.T * Rinv
            A = HtRinv @ H
            b = HtRinv @ meas.residual
            M = np.eye(k) + A @ P[:k, :k]
            Pk = P[:, :k]
            # K r and K H (J^-1 delta) share the same 6x6 solve
            rhs = np.column_stack([b, A @ prior_pull[:k]])
            sol = np.linalg.solve(M, rhs)
            Kr = Pk @ sol[:, 0]
            KH_pull = Pk @ sol[:, 1]
            dx = -Kr + KH_pull - prior_pull
            KH = np.zeros((DIM, DIM))
            KH[:, :k] = Pk @ np.linalg.solve(M, A)
            P_post = P - KH @ P
            history.append(float(meas.residual @ (Rinv * meas.residual)))
        x = boxplus(x, dx)
        if np.linalg.norm(dx) < epsilon:
            converged = True
            break
    return UpdateResult(state=x, covariance=clamp_psd(P_post), converged=converged,
                        iterations=it, measurement=meas, history=history)


def kalman_update(x_prior: StateVector, P_prior, measurement: Measurement) -> UpdateResult:
    """Single-iteration (standard EKF) update."""
    return iterated_update(x_prior, P_prior, lambda _x: measurement, epsilon=np.inf, max_iters=1)
