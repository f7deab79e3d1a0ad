import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leanlivo import so3
from leanlivo.selector import (INDOOR, SelectorState, SelectorThresholds, adaptive_threshold,
                               selection_ratio, should_select)

SQ3 = np.sqrt(3.0)


def test_threshold_law_matches_direct_evaluation():
    for s in np.linspace(0, 1, 1001):
        tau = adaptive_threshold(s, INDOOR)
        f = min(SQ3 * min(s, 1 / SQ3), 1.0)
        assert abs(tau.tau_position - f * 1.0) < 1e-12
        assert abs(tau.tau_rotation - f * np.deg2rad(60)) < 1e-12


def test_threshold_boundaries():
    t = adaptive_threshold(1 / SQ3, INDOOR)
    assert abs(t.tau_position - 1.0) < 1e-12 and abs(t.tau_rotation - np.deg2rad(60)) < 1e-12
    t = adaptive_threshold(0.0, INDOOR)
    assert t.tau_position == 0.0 and t.tau_rotation == 0.0
    t = adaptive_threshold(0.07, INDOOR)
    assert abs(t.tau_position - 0.1212436) < 1e-6
    assert abs(np.rad2deg(t.tau_rotation) - 7.274613) < 1e-5


def test_threshold_monotone_on_grid():
    grid = np.linspace(0, 1 / SQ3, 100)
    taus = np.array([adaptive_threshold(s, INDOOR).tau_position for s in grid])
    assert np.all(np.diff(taus) >= 0)


def _state_at(p0=(0, 0, 0), R0=np.eye(3)):
    return SelectorState(last_keyframe_pose=(np.asarray(R0, float), np.asarray(p0, float)))


def test_selection_examples():
    d, _ = should_select(_state_at(), (np.eye(3), np.zeros(3)), INDOOR, True)
    assert d.selected
    d, _ = should_select(_state_at(), (np.eye(3), np.array([1.5, 0, 0])), INDOOR, False)
    assert d.selected
    R = so3.exp([0, 0, np.deg2rad(10)])
    d, st_ = should_select(_state_at(), (R, np.array([0.5, 0, 0])), INDOOR, False)
    assert not d.selected and st_.last_keyframe_pose[1][0] == 0.0


def test_first_frame_selected():
    d, _ = should_select(SelectorState(), (np.eye(3), np.zeros(3)), INDOOR, False)
    assert d.selected


def test_or_semantics_grid():
    tau = SelectorThresholds(1.0, np.deg2rad(60))
    for dp, dr, deg in itertools.product(np.linspace(0, 2, 9), np.linspace(0, 120, 9), (False, True)):
        R = so3.exp([0, 0, np.deg2rad(dr)])
        d, _ = should_select(_state_at(), (R, np.array([dp, 0, 0])), tau, deg)
        assert d.selected == (deg or dp > 1.0 or np.deg2rad(dr) > tau.tau_rotation + 1e-12)


@given(st.floats(0, 0.6), st.floats(0, 0.6), st.floats(0, 2), st.floats(0, 3))
def test_lower_sigma_never_unselects(s1, s2, dp, dr):
    lo, hi = sorted((s1, s2))
    R = so3.exp([0, 0, dr])
    pose = (R, np.array([dp, 0, 0]))
    a, _ = should_select(_state_at(), pose, adaptive_threshold(hi, INDOOR), False)
    b, _ = should_select(_state_at(), pose, adaptive_threshold(lo, INDOOR), False)
    assert b.selected or not a.selected


def test_ratio():
    assert selection_ratio(SelectorState()) == 0.0
    assert selection_ratio(SelectorState(frames_seen=100, frames_selected=10)) == 10.0


def test_negative_thresholds_rejected():
    with pytest.raises(ValueError):
        SelectorThresholds(-1.0, 0.1)
