import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_rotation
from leanlivo.degeneracy import (ConstraintSpectrum, ConstraintSpectrumTransformer,
                                 DegeneracyDetector, DegeneracyState, constraint_spectrum,
                                 update_degeneracy)

E = np.eye(3)


def test_analytic_spectra():
    iso = constraint_spectrum(np.repeat(E, 10, axis=0))
    assert np.abs(iso.as_array() - 1 / np.sqrt(3)).max() < 1e-9
    r1 = constraint_spectrum(np.tile([0.0, 0, 1], (25, 1)))
    assert np.abs(r1.as_array() - [0, 0, 1]).max() < 1e-9
    r2 = constraint_spectrum(np.repeat(E[:2], 7, axis=0))
    assert np.abs(r2.as_array() - [0, np.sqrt(0.5), np.sqrt(0.5)]).max() < 1e-9


def test_spectrum_unit_norm_and_sorted(rng):
    for _ in range(100):
        n = rng.normal(size=(int(rng.integers(1, 50)), 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        s = constraint_spectrum(n).as_array()
        assert np.isclose(np.linalg.norm(s), 1.0)
        assert np.all(np.diff(s) >= 0)
        assert 0 <= np.sqrt(3) * s[0] <= 1 + 1e-12


def test_rotation_equivariance_and_weight_scale(rng):
    for _ in range(1000):
        n = rng.normal(size=(int(rng.integers(3, 40)), 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        w = rng.uniform(0.1, 2.0, n.shape[0])
        base = constraint_spectrum(n, w).as_array()
        R = random_rotation(rng)
        assert np.abs(constraint_spectrum(n @ R.T, w).as_array() - base).max() < 1e-9
        c = 10 ** rng.uniform(-3, 3)
        assert np.abs(constraint_spectrum(n, w * c).as_array() - base).max() < 1e-9


def test_subsampling_robustness(rng):
    # scan-sized isotropic set: random directions
    n = rng.normal(size=(3000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    base = constraint_spectrum(n).sigma_min
    ok = 0
    for _ in range(500):
        sub = n[rng.random(3000) < 0.5]
        ok += abs(constraint_spectrum(sub).sigma_min - base) < 0.05
    assert ok / 500 > 0.99


def test_empty_and_invalid_inputs():
    s = constraint_spectrum(np.zeros((0, 3)))
    assert not s.valid and s.sigma_min == 0
    with pytest.raises(ValueError):
        constraint_spectrum([[1.0, 1.0, 0.0]])
    with pytest.raises(ValueError):
        constraint_spectrum(E, weights=[1, -1, 1])


def _run(values, required=3):
    st_ = DegeneracyState(0.07, required)
    flags = []
    for v in values:
        st_ = update_degeneracy(st_, ConstraintSpectrum(v, 0.5, 0.8))
        flags.append(st_.flag)
    return flags


def test_hysteresis_counter():
    assert _run([0.577] * 10) == [False] * 10
    assert _run([0.01] * 3) == [False, False, True]
    assert _run([0.01, 0.01, 0.01, 0.2]) == [False, False, True, False]
    assert _run([0.01, 0.01, 0.2, 0.01, 0.01, 0.01]) == [False, False, False, False, False, True]


@given(st.lists(st.floats(0, 0.6), min_size=1, max_size=40), st.integers(1, 5))
def test_flag_means_last_k_below(values, k):
    flags = _run(values, k)
    for i, f in enumerate(flags):
        window = values[max(0, i - k + 1):i + 1]
        assert f == (len(window) == k and all(v < 0.07 for v in window))


def test_sklearn_wrappers():
    X = [np.repeat(E, 3, axis=0), np.tile([0.0, 0, 1], (4, 1))]
    T = ConstraintSpectrumTransformer().fit_transform(X)
    assert T.shape == (2, 3)
    det = DegeneracyDetector(required_consecutive=2).fit()
    assert det.get_params() == {"threshold": 0.07, "required_consecutive": 2}
    assert list(det.predict(np.vstack([T[1], T[1], T[0]]))) == [False, True, False]
