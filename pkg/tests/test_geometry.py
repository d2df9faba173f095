import math

import numpy as np
import pytest

from evtrack.geometry import (UnitQuaternion, integrate_screw, quat_multiply,
                              quat_weighted_mean, rotation_vector_error,
                              rotation_translation_integral, skew)


def rand_quat(rng):
    v = rng.normal(0.0, 1.0, 4)
    return UnitQuaternion.from_wxyz(v / np.linalg.norm(v))


def test_multiply_identity_and_inverse():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rand_quat(rng)
        qi = quat_multiply(UnitQuaternion.identity(), q)
        assert np.allclose(qi.as_wxyz(), q.as_wxyz(), atol=1e-12)
        back = quat_multiply(q, q.conjugate())
        assert rotation_vector_error(back, UnitQuaternion.identity()) < 1e-9


def test_multiply_composes_like_rotation_matrices():
    # two 90 deg turns about z equal one 180 deg turn
    q90 = UnitQuaternion.from_rotvec([0.0, 0.0, math.pi / 2])
    q180 = quat_multiply(q90, q90)
    expect = UnitQuaternion.from_rotvec([0.0, 0.0, math.pi])
    assert rotation_vector_error(q180, expect) < 1e-9

    rng = np.random.default_rng(4)
    for _ in range(50):
        a, b = rand_quat(rng), rand_quat(rng)
        R_ab = quat_multiply(a, b).to_matrix()
        assert np.allclose(R_ab, a.to_matrix() @ b.to_matrix(), atol=1e-12)


def test_multiply_associative():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b, c = (rand_quat(rng) for _ in range(3))
        left = quat_multiply(quat_multiply(a, b), c).as_wxyz()
        right = quat_multiply(a, quat_multiply(b, c)).as_wxyz()
        assert np.max(np.abs(left - right)) < 1e-9


def test_unit_norm_enforced():
    q = UnitQuaternion(2.0, 0.0, 0.0, 0.0)
    assert abs(q.w - 1.0) < 1e-12
    with pytest.raises(ValueError):
        UnitQuaternion(0.0, 0.0, 0.0, 0.0)
    rng = np.random.default_rng(6)
    for _ in range(50):
        q = quat_multiply(rand_quat(rng), rand_quat(rng))
        n = math.sqrt(q.w ** 2 + q.x ** 2 + q.y ** 2 + q.z ** 2)
        assert abs(n - 1.0) <= 1e-9


def test_skew_zero_and_unit():
    assert np.array_equal(skew([0.0, 0.0, 0.0]), np.zeros((3, 3)))
    assert np.allclose(skew([0.0, 0.0, 1.0]) @ np.array([1.0, 0.0, 0.0]),
                       [0.0, 1.0, 0.0])


def test_skew_matches_cross_product_and_antisymmetry():
    rng = np.random.default_rng(7)
    for _ in range(100):
        w, x = rng.normal(0, 2, 3), rng.normal(0, 2, 3)
        S = skew(w)
        assert np.allclose(S @ x, np.cross(w, x), atol=1e-12)
        assert np.array_equal(S, -S.T)


def test_rotation_error_trivial_cases():
    rng = np.random.default_rng(8)
    q = rand_quat(rng)
    assert rotation_vector_error(q, q) == pytest.approx(0.0, abs=1e-9)
    q_neg = UnitQuaternion.from_wxyz(-q.as_wxyz())
    assert rotation_vector_error(q_neg, q) == pytest.approx(0.0, abs=1e-7)


def test_rotation_error_axis_angle_oracle():
    # oracle: construct the estimate by rotating the truth a known angle
    q30 = UnitQuaternion.from_rotvec([math.radians(30.0), 0.0, 0.0])
    assert rotation_vector_error(q30, UnitQuaternion.identity()) == pytest.approx(30.0, abs=1e-9)
    rng = np.random.default_rng(9)
    for _ in range(50):
        q_gt = rand_quat(rng)
        axis = rng.normal(0, 1, 3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(0.0, 179.0)
        q_est = quat_multiply(q_gt, UnitQuaternion.from_rotvec(axis * math.radians(ang)))
        assert rotation_vector_error(q_est, q_gt) == pytest.approx(ang, abs=1e-6)


def test_rotation_error_symmetry_and_triangle():
    rng = np.random.default_rng(10)
    for _ in range(200):
        a, b, c = (rand_quat(rng) for _ in range(3))
        dab = rotation_vector_error(a, b)
        assert dab == pytest.approx(rotation_vector_error(b, a), abs=1e-6)
        assert 0.0 <= dab <= 180.0 + 1e-9
        assert dab <= rotation_vector_error(a, c) + rotation_vector_error(c, b) + 1e-6


def test_quat_weighted_mean_recovers_center():
    rng = np.random.default_rng(11)
    center = rand_quat(rng)
    quats, weights = [], []
    for dv in (np.zeros(3), [1e-3, 0, 0], [-1e-3, 0, 0], [0, 2e-3, 0], [0, -2e-3, 0]):
        quats.append(quat_multiply(center, UnitQuaternion.from_rotvec(dv)))
        weights.append(0.2)
    mean = quat_weighted_mean(quats, np.array(weights), init=quats[0])
    assert rotation_vector_error(mean, center) < 1e-6


def test_integrate_screw_pure_cases():
    p, q = integrate_screw([0.0, 0.0, 1.0], UnitQuaternion.identity(),
                           [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.5)
    assert np.allclose(p, [0.5, 0.0, 1.0], atol=1e-12)
    assert rotation_vector_error(q, UnitQuaternion.identity()) < 1e-12

    # pure rotation about z moves an off-axis point along a circle
    w = np.array([0.0, 0.0, math.pi])
    p, q = integrate_screw([1.0, 0.0, 0.0], UnitQuaternion.identity(),
                           [0.0, 0.0, 0.0], w, 1.0)
    assert np.allclose(p, [-1.0, 0.0, 0.0], atol=1e-9)
    assert rotation_vector_error(q, UnitQuaternion.from_rotvec(w)) < 1e-9


def test_rotation_translation_integral_matches_quadrature():
    # independent oracle: numerically integrate exp(skew(w) s) ds
    rng = np.random.default_rng(12)
    for _ in range(20):
        w = rng.normal(0.0, 2.0, 3)
        tau = rng.uniform(0.05, 0.5)
        R, V = rotation_translation_integral(w, tau)
        s_grid = np.linspace(0.0, tau, 2001)
        acc = np.zeros((3, 3))
        for i in range(len(s_grid) - 1):
            mid = 0.5 * (s_grid[i] + s_grid[i + 1])
            Rm, _ = rotation_translation_integral(w, mid)
            acc += Rm * (s_grid[i + 1] - s_grid[i])
        assert np.allclose(V, acc, atol=1e-6)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
