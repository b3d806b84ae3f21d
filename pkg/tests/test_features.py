import json
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from latdyn.exceptions import ConfigError, DimensionError
from latdyn.features import (
    JointGroupMap,
    PoseFeatureExtractor,
    descriptor_sequence,
    group_stats,
    pose_descriptor,
    state_feature,
    symmetry_features,
)
from latdyn.oracle import gen_pose_signal
from latdyn.so3 import IDENTITY, RotationSequence, exp_map


@pytest.fixture(scope="module")
def gmap():
    return JointGroupMap.default()


@pytest.fixture(scope="module")
def motion():
    return gen_pose_signal(3, 40)


def test_default_map_layout(gmap):
    assert len(gmap.groups) == 14 and len(gmap.bilateral_pairs) == 6
    assert gmap.n_features == 96
    joints = sorted(j for _, js in gmap.groups for j in js)
    assert joints == list(range(24))


def test_map_validation(gmap):
    d = json.loads((files("latdyn.data") / "default_group_map.json").read_text())
    bad = json.loads(json.dumps(d))
    bad["groups"]["core"] = []
    with pytest.raises(ConfigError):
        JointGroupMap.from_dict(bad)
    bad = json.loads(json.dumps(d))
    del bad["groups"]["head"]
    with pytest.raises(ConfigError):
        JointGroupMap.from_dict(bad)
    bad = json.loads(json.dumps(d))
    bad["bilateral_pairs"][0] = ["left_upper_leg", "tail"]
    with pytest.raises(ConfigError):
        JointGroupMap.from_dict(bad)
    with pytest.raises(ConfigError):
        JointGroupMap.from_dict({**d, "colour": 1})
    assert JointGroupMap.from_dict(d) == gmap
    assert JointGroupMap.from_dict(json.loads(json.dumps(gmap.to_dict(), sort_keys=True))) == gmap


def test_joint_out_of_range(gmap):
    seq = RotationSequence(np.tile(IDENTITY, (3, 10, 1)))
    with pytest.raises(ConfigError):
        descriptor_sequence(seq, gmap)


class TestGroupStats:
    def test_zero(self):
        z = np.zeros((3, 3))
        np.testing.assert_array_equal(group_stats(z, z, z, z), np.zeros(6))

    def test_single_joint(self):
        xi = np.array([[0.0, 0.0, 0.8]])
        z = np.zeros((1, 3))
        np.testing.assert_array_equal(group_stats(xi, z, z, z), [0.8, 0, 0, 0, 0.8, 0])

    def test_cancellation(self):
        w = 0.6
        omega = np.array([[w, 0.0, 0.0], [-w, 0.0, 0.0]])
        z = np.zeros((2, 3))
        out = group_stats(z, omega, z, z)
        assert out[1] == w and out[5] == 0.0

    def test_empty_group(self):
        e = np.zeros((0, 3))
        with pytest.raises(ConfigError):
            group_stats(e, e, e, e)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_jensen_and_sign(self, n, seed):
        rng = np.random.default_rng(seed)
        f = [rng.normal(size=(n, 3)) for _ in range(4)]
        out = group_stats(*f)
        assert np.all(out >= 0)
        assert out[4] <= out[0] + 1e-12 and out[5] <= out[1] + 1e-12


class TestSymmetry:
    def test_identical(self):
        s = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        np.testing.assert_array_equal(symmetry_features(s, s), [0.0, 0.0])

    def test_antisymmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.random(6), rng.random(6)
        np.testing.assert_array_equal(symmetry_features(a, b), -symmetry_features(b, a))

    def test_arithmetic(self):
        left = np.array([0, 0.3, 0, 0, 0, 0])
        right = np.array([0, 0.1, 0, 0, 0, 0])
        assert symmetry_features(left, right)[0] == pytest.approx(0.2, abs=1e-15)


class TestDescriptor:
    def test_width(self, motion, gmap):
        assert descriptor_sequence(motion, gmap).shape == (40, 96)

    def test_static_is_zero(self):
        rng = np.random.default_rng(1)
        pose = exp_map(rng.normal(0, 0.5, (24, 3)))
        seq = RotationSequence(np.tile(pose, (10, 1, 1)))
        assert not descriptor_sequence(seq).any()

    def test_frame_matches_sequence(self, motion, gmap):
        full = descriptor_sequence(motion, gmap)
        for t in (0, 1, 2, 3, 17, 39):
            np.testing.assert_array_equal(pose_descriptor(motion, t, gmap), full[t])

    def test_window_is_four_frames(self, motion, gmap):
        t = 20
        data = np.array(motion.data)
        data[: t - 3] = data[0]  # history before t-3 must not matter (reference kept at frame 0)
        other = RotationSequence(data)
        np.testing.assert_array_equal(
            pose_descriptor(motion, t, gmap, motion.data[0]), pose_descriptor(other, t, gmap, motion.data[0])
        )

    def test_frame_out_of_range(self, motion):
        with pytest.raises(IndexError):
            pose_descriptor(motion, 40)

    def test_within_group_permutation(self, motion, gmap):
        perm = np.arange(24)
        for _, joints in gmap.groups:
            js = list(joints)
            perm[js] = js[::-1]
        shuffled = RotationSequence(motion.data[:, perm])
        np.testing.assert_array_equal(descriptor_sequence(shuffled, gmap), descriptor_sequence(motion, gmap))

    def test_mirror(self, motion, gmap):
        groups = dict(gmap.groups)
        perm = np.arange(24)
        for left, right in gmap.bilateral_pairs:
            perm[list(groups[left])] = groups[right]
            perm[list(groups[right])] = groups[left]
        mirrored = descriptor_sequence(RotationSequence(motion.data[:, perm]), gmap)
        orig = descriptor_sequence(motion, gmap)
        names = gmap.names
        swap = {}
        for left, right in gmap.bilateral_pairs:
            swap[left], swap[right] = right, left
        for i, name in enumerate(names):
            j = names.index(swap.get(name, name))
            np.testing.assert_array_equal(mirrored[:, 6 * i : 6 * i + 6], orig[:, 6 * j : 6 * j + 6])
        np.testing.assert_array_equal(mirrored[:, 84:], -orig[:, 84:])

    def test_magnitudes_nonnegative(self, motion, gmap):
        d = descriptor_sequence(motion, gmap)[:, :84].reshape(-1, 14, 6)
        assert np.all(d >= 0)
        assert np.all(d[..., 4] <= d[..., 0] + 1e-12) and np.all(d[..., 5] <= d[..., 1] + 1e-12)


class TestStateFeature:
    def test_zero(self):
        np.testing.assert_array_equal(state_feature(np.zeros(3), np.zeros(3)), np.zeros(7))

    def test_three_four_five(self):
        np.testing.assert_array_equal(state_feature(np.array([1.0, 2.0]), np.array([3.0, 4.0])), [1, 2, 3, 4, 5])

    def test_scaling(self):
        v = np.array([0.3, -1.2, 2.0])
        s = -2.5
        a = state_feature(np.zeros(3), v)[-1]
        b = state_feature(np.zeros(3), s * v)[-1]
        assert b == pytest.approx(abs(s) * a, rel=1e-15)

    def test_width_and_norm(self):
        rng = np.random.default_rng(2)
        z, v = rng.normal(size=128), rng.normal(size=128)
        f = state_feature(z, v)
        assert f.shape == (257,)
        assert abs(f[-1] - np.linalg.norm(f[128:256])) < 1e-12

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            state_feature(np.zeros(2), np.zeros(3))


class TestExtractor:
    def test_fit_transform(self, motion):
        ext = PoseFeatureExtractor()
        out = ext.fit_transform(motion)
        np.testing.assert_array_equal(out, descriptor_sequence(motion))
        assert ext.n_features_out_ == 96

    def test_reference_from_fit(self, motion):
        ext = PoseFeatureExtractor(reference_frame=5).fit(motion)
        np.testing.assert_array_equal(ext.transform(motion), descriptor_sequence(motion, None, motion.data[5]))

    def test_params_and_clone(self):
        ext = PoseFeatureExtractor(reference_frame=2)
        assert ext.get_params() == {"group_map": None, "reference_frame": 2}
        assert clone(ext).reference_frame == 2

    def test_joint_count_checked(self, motion):
        ext = PoseFeatureExtractor().fit(motion)
        with pytest.raises(DimensionError):
            ext.transform(np.tile(IDENTITY, (3, 25, 1)))
