import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from quadplan import so3

from conftest import MANY

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
quat = st.tuples(finite, finite, finite, finite).filter(lambda q: sum(v * v for v in q) > 1e-3).map(
    lambda q: so3.normalize(np.array(q)))


def _scipy(q):
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


@settings(max_examples=MANY)
@given(vec3.map(lambda v: v * 3.0))
def test_exp_log_round_trip(v):
    if np.linalg.norm(v) >= math.pi:
        v = v / np.linalg.norm(v) * (math.pi - 1e-3)
    assert np.max(np.abs(so3.log(so3.exp(v)) - v)) <= 1e-9


@settings(max_examples=MANY)
@given(quat)
def test_log_exp_round_trip_quaternion(q):
    r = so3.exp(so3.log(q))
    assert min(np.max(np.abs(r - q)), np.max(np.abs(r + q))) <= 1e-9


@given(vec3)
def test_exp_matches_scipy(v):
    expected = Rotation.from_rotvec(v).as_matrix()
    assert np.allclose(so3.to_matrix(so3.exp(v)), expected, atol=1e-12)


@given(quat, quat)
def test_mul_matches_matrix_product(a, b):
    assert np.allclose(so3.to_matrix(so3.mul(a, b)), so3.to_matrix(a) @ so3.to_matrix(b), atol=1e-12)


@given(quat, vec3)
def test_boxplus_boxminus_inverse(q, d):
    assert np.allclose(so3.boxminus(so3.boxplus(q, d), q), d, atol=1e-9)


@given(quat, quat)
def test_boxminus_is_world_frame_relative_rotation(a, b):
    expected = (_scipy(a) * _scipy(b).inv()).as_rotvec()
    assert np.allclose(so3.boxminus(a, b), expected, atol=1e-9)


@given(st.floats(-3.0, 3.0), st.floats(-1.4, 1.4), st.floats(-3.0, 3.0))
def test_rpy_round_trip(r, p, y):
    q = so3.from_rpy(r, p, y)
    assert np.allclose(so3.to_rpy(q), [r, p, y], atol=1e-9)
    expected = Rotation.from_euler("ZYX", [y, p, r]).as_matrix()
    assert np.allclose(so3.to_matrix(q), expected, atol=1e-12)


def test_small_angle_branch_is_continuous():
    v = np.array([1e-9, -2e-9, 3e-10])
    assert np.allclose(so3.log(so3.exp(v)), v, rtol=1e-9, atol=0)
    assert np.allclose(so3.log(so3.exp(v * 1e4)), v * 1e4, rtol=1e-9, atol=0)


def test_log_at_pi_picks_canonical_axis():
    q = np.array([0.0, 0.0, -1.0, 0.0])
    assert np.allclose(so3.log(q), [0.0, math.pi, 0.0])


def test_normalize_zero_and_sign():
    assert np.array_equal(so3.normalize(np.zeros(4)), so3.IDENTITY)
    assert so3.normalize(np.array([-1.0, 0.0, 0.0, 0.0]))[0] == 1.0


def test_skew_is_cross_product():
    a, b = np.array([0.3, -1.0, 2.0]), np.array([1.5, 0.2, -0.7])
    assert np.allclose(so3.skew(a) @ b, np.cross(a, b))


def test_wrap_angle():
    assert math.isclose(so3.wrap_angle(3 * math.pi / 2), -math.pi / 2)
    assert math.isclose(so3.wrap_angle(-math.pi / 4), -math.pi / 4)
