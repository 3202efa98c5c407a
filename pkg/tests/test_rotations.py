import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from mocapsolve.rotations import (SERIES_ANGLE, hat, is_rotation, kabsch, log_rotation, rodrigues,
                                  rodrigues_with_jacobian, rotation_between)

vec3 = arrays(float, 3, elements=st.floats(-3.0, 3.0))


@given(vec3)
def test_rodrigues_matches_independent_rotvec(w):
    np.testing.assert_allclose(rodrigues(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-12)


def test_series_branch_is_continuous_at_the_switch():
    axis = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    below = rodrigues(axis * SERIES_ANGLE * (1 - 1e-9))
    above = rodrigues(axis * SERIES_ANGLE * (1 + 1e-9))
    np.testing.assert_allclose(below, above, atol=1e-14)
    np.testing.assert_allclose(rodrigues(axis * 1e-4),
                               Rotation.from_rotvec(axis * 1e-4).as_matrix(), atol=1e-16)


def test_zero_rotation_is_identity_exactly():
    assert np.array_equal(rodrigues(np.zeros(3)), np.eye(3))


@given(vec3)
def test_rodrigues_jacobian_matches_central_differences(w):
    _, dR = rodrigues_with_jacobian(w)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (rodrigues(w + e) - rodrigues(w - e)) / (2 * h)
        np.testing.assert_allclose(dR[..., k], fd, atol=1e-8)


def test_jacobian_at_zero_is_generator():
    _, dR = rodrigues_with_jacobian(np.zeros(3))
    for k in range(3):
        np.testing.assert_array_equal(dR[..., k], hat(np.eye(3)[k]))


@given(arrays(float, 3, elements=st.floats(-1.0, 1.0)))
def test_log_inverts_rodrigues_below_pi(w):
    if np.linalg.norm(w) >= np.pi - 1e-3:
        w = w * 0.5
    np.testing.assert_allclose(log_rotation(rodrigues(w)), w, atol=1e-9)


def test_log_near_pi_recovers_axis():
    axis = np.array([1.0, 2.0, -2.0]) / 3
    w = axis * (np.pi - 1e-6)
    np.testing.assert_allclose(rodrigues(log_rotation(rodrigues(w))), rodrigues(w), atol=1e-9)


def test_kabsch_recovers_rigid_motion():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(10, 3))
    R = rodrigues(rng.normal(size=3))
    t = rng.normal(size=3)
    Rk, tk = kabsch(src, src @ R.T + t)
    np.testing.assert_allclose(Rk, R, atol=1e-12)
    np.testing.assert_allclose(tk, t, atol=1e-12)
    assert is_rotation(Rk)


@given(arrays(float, 3, elements=st.floats(-1, 1)), arrays(float, 3, elements=st.floats(-1, 1)))
def test_rotation_between_maps_a_onto_b(a, b):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    R = rotation_between(a, b)
    assert is_rotation(R)
    np.testing.assert_allclose(R @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-9)


def test_rotation_between_antiparallel():
    a = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(rotation_between(a, -a) @ a, -a, atol=1e-12)
