"""Degeneracy-aware adaptive visual frame selection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import so3
from .degeneracy import INV_SQRT3

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class SelectorThresholds:
    tau_position: float
    tau_rotation: float

    def __post_init__(self):
        if not (self.tau_position >= 0 and self.tau_rotation >= 0):
            raise ValueError("thresholds must be non-negative")


INDOOR = SelectorThresholds(1.0, np.deg2rad(60.0))
OUTDOOR = SelectorThresholds(2.0, np.deg2rad(60.0))


@dataclass
class SelectorState:
    last_keyframe_pose: Optional[Tuple[np.ndarray, np.ndarray]] = None
    frames_seen: int = 0
    frames_selected: int = 0


@dataclass(frozen=True)
class SelectionDecision:
    selected: bool
    delta_position: float
    delta_rotation: float
    degenerate: bool


def adaptive_threshold(sigma_min: float, predefined: SelectorThresholds) -> SelectorThresholds:
    """Scale the predefined thresholds by sqrt(3) * sigma_min, clamped to [0, 1]."""
    s = min(max(float(sigma_min), 0.0), INV_SQRT3)
    factor = min(SQRT3 * s, 1.0)
    return SelectorThresholds(factor * predefined.tau_position, factor * predefined.tau_rotation)


def should_select(state: SelectorState, current_pose, tau: SelectorThresholds, degenerate: bool):
    """Keyframe test against the last selected keyframe.

    ``current_pose`` is (R, p). Returns ``(decision, state)``; ``state`` is
    updated in place.
    """
    R, p = current_pose
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    state.frames_seen += 1
    if state.last_keyframe_pose is None:
        dpos, drot = np.inf, np.inf
    else:
        R0, p0 = state.last_keyframe_pose
        dpos = float(np.linalg.norm(p - p0))
        drot = so3.angle(R0.T @ R)
    selected = bool(degenerate or dpos > tau.tau_position or drot > tau.tau_rotation)
    if selected:
        state.frames_selected += 1
        state.last_keyframe_pose = (R.copy(), p.copy())
    return SelectionDecision(selected, dpos, drot, bool(degenerate)), state


def selection_ratio(state: SelectorState) -> float:
    """Percentage of camera frames selected (0 when none seen)."""
    if state.frames_seen == 0:
        return 0.0
    return 100.0 * state.frames_selected / state.frames_seen
