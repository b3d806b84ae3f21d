import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latdyn.exceptions import DimensionError
from latdyn.so3 import (
    IDENTITY,
    RotationSequence,
    angular_acceleration,
    angular_jerk,
    angular_velocity,
    canonicalize,
    exp_map,
    log_map,
    pose_to_reference,
    quat_conj,
    quat_mul,
    relative_rotation,
)


def zrot(theta):
    return exp_map(np.array([0.0, 0.0, theta]))


def random_rotvecs(rng, n, max_angle=np.pi - 0.01):
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    return axis * rng.uniform(0, max_angle, (n, 1))


finite_vec = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


class TestExpLog:
    def test_exp_zero_is_identity(self):
        np.testing.assert_array_equal(exp_map(np.zeros(3)), IDENTITY)

    def test_exp_quarter_turn_about_z(self):
        q = exp_map(np.array([0.0, 0.0, np.pi / 2]))
        np.testing.assert_allclose(q, [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], atol=1e-15)

    def test_log_identity(self):
        np.testing.assert_array_equal(log_map(IDENTITY), np.zeros(3))

    def test_log_quarter_turn(self):
        np.testing.assert_allclose(log_map(zrot(np.pi / 2)), [0, 0, np.pi / 2], atol=1e-15)

    def test_log_near_pi(self):
        angle = np.pi - 1e-6
        v = log_map(exp_map(np.array([angle, 0.0, 0.0])))
        np.testing.assert_allclose(v, [angle, 0, 0], atol=1e-6)

    def test_log_angle_bounded_by_pi(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((2000, 4))
        assert np.all(np.linalg.norm(log_map(q), axis=-1) <= np.pi + 1e-9)

    def test_round_trip_1000_random(self):
        rng = np.random.default_rng(1)
        q = canonicalize(exp_map(random_rotvecs(rng, 1000)))
        back = canonicalize(exp_map(log_map(q)))
        assert np.max(np.abs(back - q)) < 1e-10

    def test_log_of_inverse_negates(self):
        rng = np.random.default_rng(2)
        q = exp_map(random_rotvecs(rng, 200))
        np.testing.assert_allclose(log_map(quat_conj(q)), -log_map(q), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(finite_vec)
    def test_log_exp_round_trip(self, v):
        angle = np.linalg.norm(v)
        if angle >= np.pi - 1e-3:
            return
        assert np.linalg.norm(log_map(exp_map(v)) - v) < 1e-10

    def test_small_angle_branch_is_continuous(self):
        for a in (1e-4 * (1 - 1e-9), 1e-4 * (1 + 1e-9), 1e-8, 1e-12):
            v = np.array([a, -a / 2, a / 3])
            np.testing.assert_allclose(log_map(exp_map(v)), v, rtol=1e-12, atol=1e-20)


class TestQuaternions:
    def test_canonical_w_nonnegative(self):
        q = canonicalize(np.array([-0.5, 0.5, 0.5, 0.5]))
        np.testing.assert_array_equal(q, [0.5, -0.5, -0.5, -0.5])

    def test_canonical_tie_break(self):
        q = canonicalize(np.array([0.0, 0.0, -1.0, 0.0]))
        np.testing.assert_array_equal(q, [0.0, 0.0, 1.0, 0.0])

    def test_product_stays_unit(self):
        rng = np.random.default_rng(3)
        a = exp_map(random_rotvecs(rng, 500))
        b = exp_map(random_rotvecs(rng, 500))
        assert np.max(np.abs(np.linalg.norm(quat_mul(a, b), axis=-1) - 1)) < 1e-12

    def test_relative_rotation_self_is_identity(self):
        rng = np.random.default_rng(4)
        q = exp_map(random_rotvecs(rng, 1000))
        np.testing.assert_allclose(relative_rotation(q, q), np.tile(IDENTITY, (1000, 1)), atol=1e-12)

    def test_relative_rotation_from_identity(self):
        q = canonicalize(exp_map(np.array([0.3, -0.2, 0.9])))
        np.testing.assert_allclose(relative_rotation(IDENTITY, q), q, atol=1e-15)

    def test_relative_rotation_commuting_pair(self):
        np.testing.assert_allclose(relative_rotation(zrot(np.pi / 4), zrot(np.pi / 2)), zrot(np.pi / 4), atol=1e-15)


class TestSequence:
    def test_rejects_bad_shape(self):
        with pytest.raises(DimensionError):
            RotationSequence(np.zeros((3, 4)))
        with pytest.raises(DimensionError):
            RotationSequence(np.zeros((0, 2, 4)))

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            RotationSequence(np.tile(IDENTITY, (2, 1, 1)), frame_interval=0.0)

    def test_data_is_read_only_and_canonical(self):
        seq = RotationSequence(np.array([[[-2.0, 0.0, 0.0, 0.0]]]))
        np.testing.assert_array_equal(seq.data[0, 0], IDENTITY)
        assert not seq.data.flags.writeable


class TestKinematics:
    def test_pose_to_reference_zero_when_equal(self):
        rng = np.random.default_rng(5)
        q = exp_map(random_rotvecs(rng, 4))
        seq = RotationSequence(np.tile(q, (6, 1, 1)))
        np.testing.assert_array_equal(pose_to_reference(seq, q), np.zeros((6, 4, 3)))

    def test_pose_to_reference_single_joint(self):
        seq = RotationSequence(zrot(0.7)[None, None])
        np.testing.assert_allclose(pose_to_reference(seq, IDENTITY[None])[0, 0], [0, 0, 0.7], atol=1e-15)

    def test_pose_to_reference_world_invariance(self):
        rng = np.random.default_rng(6)
        data = exp_map(random_rotvecs(rng, 10 * 3)).reshape(10, 3, 4)
        ref = exp_map(random_rotvecs(rng, 3))
        world = exp_map(np.array([0.4, 1.1, -0.3]))
        a = pose_to_reference(RotationSequence(data), ref)
        b = pose_to_reference(RotationSequence(quat_mul(world, data)), quat_mul(world, ref))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_pose_to_reference_joint_mismatch(self):
        seq = RotationSequence(np.tile(IDENTITY, (2, 3, 1)))
        with pytest.raises(DimensionError):
            pose_to_reference(seq, np.tile(IDENTITY, (2, 1)))

    def test_constant_sequence_all_zero(self):
        rng = np.random.default_rng(7)
        seq = RotationSequence(np.tile(exp_map(random_rotvecs(rng, 5)), (8, 1, 1)))
        w = angular_velocity(seq)
        a = angular_acceleration(w)
        assert not w.any() and not a.any() and not angular_jerk(a).any()

    def test_spin_about_x(self):
        delta = 0.05
        data = exp_map(np.array([[delta * t, 0.0, 0.0] for t in range(10)]))[:, None]
        w = angular_velocity(RotationSequence(data))
        np.testing.assert_array_equal(w[0], np.zeros((1, 3)))
        np.testing.assert_allclose(w[1:, 0], np.tile([delta, 0, 0], (9, 1)), atol=1e-14)

    def test_reversal_negates(self):
        rng = np.random.default_rng(8)
        data = exp_map(np.cumsum(rng.normal(0, 0.2, (12, 2, 3)), axis=0))
        w = angular_velocity(RotationSequence(data))
        w_rev = angular_velocity(RotationSequence(data[::-1]))
        np.testing.assert_allclose(w_rev[1:][::-1], -w[1:], atol=1e-12)

    def test_doubling_interval_halves(self):
        rng = np.random.default_rng(9)
        data = exp_map(np.cumsum(rng.normal(0, 0.2, (12, 2, 3)), axis=0))
        w1 = angular_velocity(RotationSequence(data, 1.0))
        w2 = angular_velocity(RotationSequence(data, 2.0))
        np.testing.assert_array_equal(w2, w1 / 2.0)

    def test_linear_omega_gives_constant_alpha(self):
        s = 0.01
        omega = (np.arange(10) * s)[:, None, None] * np.array([[1.0, 0.0, 0.0]])
        alpha = angular_acceleration(omega)
        np.testing.assert_array_equal(alpha[0], 0.0)
        np.testing.assert_allclose(alpha[1:, 0, 0], s, rtol=1e-12)
        np.testing.assert_allclose(angular_jerk(alpha)[2:], 0.0, atol=1e-15)

    def test_constant_alpha_gives_zero_jerk(self):
        alpha = np.full((5, 2, 3), 0.3)
        assert not angular_jerk(alpha)[1:].any()
