"""Grouped rotational-kinematics pose descriptor and previous-state feature.

The descriptor layout is fixed so checkpoints stay valid:

* for each group, in map order: ``[E|xi|, E|omega|, E|alpha|, E|eta|, |E xi|, |E omega|]``
* then for each bilateral pair, in map order: ``[E|omega|_L - E|omega|_R, E|alpha|_L - E|alpha|_R]``

Group means sum sorted values so that reordering joints inside a group gives
bit-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DimensionError
from .so3 import (
    RotationSequence,
    angular_acceleration,
    angular_jerk,
    angular_velocity,
    pose_to_reference,
)

N_GROUPS = 14
N_PAIRS = 6
STATS_PER_GROUP = 6
STATS_PER_PAIR = 2


@dataclass(frozen=True)
class JointGroupMap:
    """Joint membership of the 14 anatomical groups and the 6 bilateral pairs."""

    groups: tuple  # ((name, (joint, ...)), ...) in layout order
    bilateral_pairs: tuple  # ((left_name, right_name), ...)
    n_joints: int | None = None

    def __post_init__(self):
        groups = tuple((str(name), tuple(int(j) for j in joints)) for name, joints in self.groups)
        pairs = tuple((str(a), str(b)) for a, b in self.bilateral_pairs)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "bilateral_pairs", pairs)

        if len(groups) != N_GROUPS:
            raise ConfigError(f"group map must define exactly {N_GROUPS} groups, got {len(groups)}")
        if len(pairs) != N_PAIRS:
            raise ConfigError(f"group map must define exactly {N_PAIRS} bilateral pairs, got {len(pairs)}")
        names = [name for name, _ in groups]
        if len(set(names)) != len(names):
            raise ConfigError("group names must be unique")
        for name, joints in groups:
            if not joints:
                raise ConfigError(f"group {name!r} is empty")
            if min(joints) < 0:
                raise ConfigError(f"group {name!r} has a negative joint index")
            if self.n_joints is not None and max(joints) >= self.n_joints:
                raise ConfigError(
                    f"group {name!r} references joint {max(joints)} but the skeleton has {self.n_joints} joints"
                )
        for left, right in pairs:
            for side in (left, right):
                if side not in names:
                    raise ConfigError(f"bilateral pair references unknown group {side!r}")

    @property
    def names(self):
        return [name for name, _ in self.groups]

    @property
    def n_features(self) -> int:
        return STATS_PER_GROUP * len(self.groups) + STATS_PER_PAIR * len(self.bilateral_pairs)

    def check_joints(self, n_joints: int):
        top = max(max(joints) for _, joints in self.groups)
        if top >= n_joints:
            raise ConfigError(f"group map references joint {top} but the motion has {n_joints} joints")

    def to_dict(self) -> dict:
        out = {
            # a list of pairs keeps group order under key-sorted serialization
            "groups": [[name, list(joints)] for name, joints in self.groups],
            "bilateral_pairs": [list(p) for p in self.bilateral_pairs],
        }
        if self.n_joints is not None:
            out["n_joints"] = self.n_joints
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "JointGroupMap":
        unknown = set(d) - {"groups", "bilateral_pairs", "n_joints"}
        if unknown:
            raise ConfigError(f"unknown group-map keys: {sorted(unknown)}")
        try:
            groups = d["groups"]
            groups = tuple(groups.items()) if isinstance(groups, dict) else tuple((n, js) for n, js in groups)
            pairs = tuple(d["bilateral_pairs"])
        except (KeyError, AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed group map: {exc}") from exc
        try:
            return cls(groups=groups, bilateral_pairs=pairs, n_joints=d.get("n_joints"))
        except (AttributeError, TypeError) as exc:
            raise ConfigError(f"malformed group map: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "JointGroupMap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "JointGroupMap":
        """The bundled 14-group map for a generic 24-joint skeleton."""
        text = resources.files("latdyn.data").joinpath("default_group_map.json").read_text()
        return cls.from_dict(json.loads(text))


def _sorted_mean(x, axis):
    # summing in sorted order makes the result independent of joint order
    return np.sort(x, axis=axis).sum(axis=axis) / x.shape[axis]


def group_stats(xi, omega, alpha, eta):
    """Six statistics for one group at one frame (or a batch of frames).

    Each argument has shape ``(..., n_joints_in_group, 3)``.
    Returns ``(..., 6)``: four mean magnitudes, then the norm of the mean
    pose-to-reference vector and of the mean angular velocity.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-2] == 0:
        raise ConfigError("group_stats needs at least one joint")
    fields = [np.asarray(a, dtype=np.float64) for a in (xi, omega, alpha, eta)]
    mags = [_sorted_mean(np.linalg.norm(f, axis=-1), axis=-1) for f in fields]
    coherent = [np.linalg.norm(_sorted_mean(f, axis=-2), axis=-1) for f in fields[:2]]
    return np.stack(mags + coherent, axis=-1)


def symmetry_features(left_stats, right_stats):
    """Left-minus-right difference of mean angular velocity and acceleration magnitudes."""
    left_stats = np.asarray(left_stats, dtype=np.float64)
    right_stats = np.asarray(right_stats, dtype=np.float64)
    return left_stats[..., 1:3] - right_stats[..., 1:3]


def kinematic_fields(seq: RotationSequence, ref):
    """Return ``(xi, omega, alpha, eta)``, each of shape (T, J, 3)."""
    xi = pose_to_reference(seq, ref)
    omega = angular_velocity(seq)
    alpha = angular_acceleration(omega, seq.frame_interval)
    eta = angular_jerk(alpha, seq.frame_interval)
    return xi, omega, alpha, eta


def descriptor_sequence(seq: RotationSequence, group_map: JointGroupMap | None = None, ref=None):
    """Pose descriptors for every frame, shape (T, 96) for the canonical map.

    ``ref`` defaults to the first frame of ``seq``.
    """
    if group_map is None:
        group_map = JointGroupMap.default()
    group_map.check_joints(seq.n_joints)
    if ref is None:
        ref = seq.data[0]
    fields = kinematic_fields(seq, ref)
    per_group = {}
    for name, joints in group_map.groups:
        idx = list(joints)
        per_group[name] = group_stats(*(f[:, idx] for f in fields))
    blocks = [per_group[name] for name in group_map.names]
    blocks += [symmetry_features(per_group[a], per_group[b]) for a, b in group_map.bilateral_pairs]
    out = np.concatenate(blocks, axis=-1)
    assert out.shape[-1] == group_map.n_features
    return out


def pose_descriptor(seq: RotationSequence, t: int, group_map: JointGroupMap | None = None, ref=None):
    """Descriptor for frame ``t``; depends on frames ``t-3 .. t`` only."""
    if not 0 <= t < seq.n_frames:
        raise IndexError(f"frame {t} out of range for a sequence of {seq.n_frames} frames")
    if ref is None:
        ref = seq.data[0]
    # jerk at t needs omega at t-2..t, i.e. frames t-3..t; for t < 3 the
    # window is the exact prefix and carries the same zero boundary
    window = RotationSequence(seq.data[max(0, t - 3) : t + 1], seq.frame_interval)
    return descriptor_sequence(window, group_map, ref)[-1]


def state_feature(z, v):
    """``[z; v; |v|]`` along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if z.shape != v.shape:
        raise DimensionError(f"z and v must have the same shape, got {z.shape} and {v.shape}")
    return np.concatenate([z, v, np.linalg.norm(v, axis=-1, keepdims=True)], axis=-1)


class PoseFeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn a :class:`RotationSequence` into a (T, 96) descriptor matrix.

    ``fit`` stores the reference pose (frame ``reference_frame`` of the fitted
    sequence), so later motions are measured against the training rest pose.

    Parameters
    ----------
    group_map : JointGroupMap, optional
        Defaults to the bundled 24-joint map.
    reference_frame : int
        Frame of the fitting sequence used as the per-joint reference.
    """

    def __init__(self, group_map=None, reference_frame=0):
        self.group_map = group_map
        self.reference_frame = reference_frame

    def _map(self):
        return self.group_map if self.group_map is not None else JointGroupMap.default()

    def fit(self, X, y=None):
        seq = _as_sequence(X)
        self._map().check_joints(seq.n_joints)
        if not 0 <= self.reference_frame < seq.n_frames:
            raise ConfigError(f"reference_frame {self.reference_frame} outside a {seq.n_frames}-frame motion")
        self.reference_ = np.array(seq.data[self.reference_frame])
        self.n_joints_ = seq.n_joints
        self.n_features_out_ = self._map().n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        seq = _as_sequence(X)
        if seq.n_joints != self.n_joints_:
            raise DimensionError(f"fitted on {self.n_joints_} joints, got {seq.n_joints}")
        return descriptor_sequence(seq, self._map(), self.reference_)


def _as_sequence(X) -> RotationSequence:
    if isinstance(X, RotationSequence):
        return X
    return RotationSequence(np.asarray(X, dtype=np.float64))
