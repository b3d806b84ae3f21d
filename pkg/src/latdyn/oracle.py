"""Synthetic ground truth: a constant-coefficient spring-damper latent system.

The system is driven by real pose descriptors computed from synthetic joint
motion, so a learned model has to recover the coefficients through its
neural heads. Closed-form helpers (transition matrix, spectral radius,
matrix-power trajectories) serve as independent references in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural as nn
from .dynamics import HEAD_ACTIVATION, DynamicsModel, ForceParams, LatentState, integrate, step
from .exceptions import ConfigError, DivergenceError
from .features import JointGroupMap, descriptor_sequence
from .so3 import RotationSequence, exp_map, quat_mul
from .training import TrainingClip


def transition_matrix(kappa, c, m, dt=1.0):
    """Per-dimension linear map on ``(z - z_ref, v)`` for one step with ``g = 0``.

    Broadcasts over array inputs; the result has shape ``(..., 2, 2)``.
    """
    kappa, c, m = (np.asarray(a, dtype=np.float64) for a in (kappa, c, m))
    if np.any(m <= 0):
        raise ValueError("mass must be strictly positive")
    k = kappa / m
    d = 1.0 - dt * c / m
    out = np.empty(np.broadcast(k, d).shape + (2, 2))
    out[..., 0, 0] = 1.0 - dt * dt * k
    out[..., 0, 1] = dt * d
    out[..., 1, 0] = -dt * k
    out[..., 1, 1] = d
    return out


def spectral_radius(M):
    """Largest eigenvalue modulus of 2x2 matrices via the characteristic polynomial."""
    M = np.asarray(M, dtype=np.float64)
    tr = M[..., 0, 0] + M[..., 1, 1]
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    disc = tr * tr - 4.0 * det
    root = np.sqrt(np.abs(disc))
    real_case = np.maximum(np.abs(tr + root), np.abs(tr - root)) / 2.0
    complex_case = np.sqrt(np.abs(det))
    return np.where(disc >= 0.0, real_case, complex_case)


def matrix_power_trajectory(M, e0, v0, n_steps):
    """States ``M^t [e0, v0]`` for ``t = 1 .. n_steps`` (per dimension).

    ``M`` has shape (d, 2, 2); returns ``(E, V)`` each of shape (n_steps, d).
    """
    M = np.asarray(M, dtype=np.float64)
    x0 = np.stack([np.asarray(e0, dtype=np.float64), np.asarray(v0, dtype=np.float64)], axis=-1)
    out = np.empty((n_steps,) + x0.shape)
    power = np.broadcast_to(np.eye(2), M.shape).copy()
    for t in range(n_steps):
        power = M @ power
        out[t] = np.einsum("dij,dj->di", power, x0)
    return out[..., 0], out[..., 1]


@dataclass
class SyntheticSystem:
    """Constant spring-damper coefficients plus a linear pose coupling ``g = W_pose f``."""

    kappa: np.ndarray
    c: np.ndarray
    m: np.ndarray
    W_pose: np.ndarray
    z_ref: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        for name in ("kappa", "c", "m", "W_pose", "z_ref"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.kappa <= 0) or np.any(self.c <= 0) or np.any(self.m <= 0):
            raise ConfigError("kappa, c and m must be strictly positive")
        rho = self.spectral_radii
        if np.any(rho >= 1.0):
            raise ConfigError(f"system is not stable: spectral radii {rho}")

    @property
    def d_z(self) -> int:
        return self.z_ref.shape[0]

    @property
    def spectral_radii(self):
        return spectral_radius(transition_matrix(self.kappa, self.c, self.m, self.dt))

    def forces(self, f_pose) -> ForceParams:
        return ForceParams(self.W_pose @ f_pose, self.kappa, self.c, self.m)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa.tolist(),
            "c": self.c.tolist(),
            "m": self.m.tolist(),
            "z_ref": self.z_ref.tolist(),
            "W_pose": self.W_pose.tolist(),
            "dt": self.dt,
            "spectral_radius": self.spectral_radii.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSystem":
        return cls(d["kappa"], d["c"], d["m"], d["W_pose"], d["z_ref"], d.get("dt", 1.0))


def simulate(system: SyntheticSystem, descriptors, noise_std=0.0, rng=None) -> TrainingClip:
    """Roll the true system from rest over ``descriptors``; optional Gaussian noise on targets."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    init = LatentState(system.z_ref.copy(), np.zeros(system.d_z))

    def step_fn(state, f):
        return step(state, system.forces(f), None, system.z_ref, system.dt)

    try:
        zs, _ = integrate(step_fn, descriptors, init)
    except DivergenceError as exc:
        raise ConfigError(f"synthetic system diverged: {exc}") from exc
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        zs = zs + noise_std * rng.standard_normal(zs.shape)
    return TrainingClip(zs, descriptors)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def gen_pose_signal(seed, n_frames, quiescent_tail=0, n_joints=24, base=None, ramp=30) -> RotationSequence:
    """Smooth random joint motion that settles on ``base`` for the last frames.

    Each joint follows ``base * exp(a(t))`` where ``a(t)`` is a sum of 2-4
    sinusoids with random axes, phases, periods in [20, 200] frames and total
    amplitude at most 1 rad. An envelope ramps the motion in from frame 0 and
    out to exactly zero before the final ``quiescent_tail`` frames, so frame 0
    and the tail all equal ``base``.
    """
    if not n_frames > quiescent_tail >= 0:
        raise ConfigError(f"need n_frames > quiescent_tail >= 0, got {n_frames} and {quiescent_tail}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if base is None:
        base = np.tile([1.0, 0.0, 0.0, 0.0], (n_joints, 1))
    base = np.asarray(base, dtype=np.float64)
    t = np.arange(n_frames, dtype=np.float64)
    curves = np.zeros((n_frames, n_joints, 3))
    for j in range(n_joints):
        k = int(rng.integers(2, 5))
        weights = rng.uniform(0.2, 1.0, size=k)
        amps = rng.uniform(0.2, 1.0) * weights / weights.sum()
        for a in range(k):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            period = rng.uniform(20.0, 200.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            curves[:, j] += amps[a] * axis * np.sin(2.0 * np.pi * t / period + phase)[:, None]

    moving = n_frames - quiescent_tail
    r = max(1, min(ramp, moving // 3))
    env = np.zeros(n_frames)
    if moving > 2:
        tm = t[:moving]
        env[:moving] = _smoothstep(tm / r) * _smoothstep((moving - 1 - tm) / r)
    rot = exp_map(env[:, None, None] * curves)
    return RotationSequence(quat_mul(base[None], rot))


def make_system(d_z=8, seed=0, group_map=None, rho_range=(0.85, 0.97), calib_frames=600, d_p=96) -> SyntheticSystem:
    """Random stable system whose latent dimensions each have unit std under typical motion.

    Coefficients are drawn per dimension so the 2x2 transition matrix is
    under-damped with spectral radius inside ``rho_range``; rows of the pose
    coupling are then rescaled on a calibration motion.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = rho_range
    kappa, c, m = np.empty(d_z), np.empty(d_z), np.empty(d_z)
    for d in range(d_z):
        while True:
            rho = rng.uniform(lo, hi)
            mass = rng.uniform(0.5, 2.0)
            stiff = rng.uniform(0.02, 0.25)
            damp = 1.0 - rho * rho  # under-damped: rho^2 = det = 1 - c/m
            M = transition_matrix(stiff, damp, 1.0)
            tr = M[0, 0] + M[1, 1]
            if tr * tr < 4.0 * (1.0 - damp):
                break
        kappa[d], c[d], m[d] = stiff * mass, damp * mass, mass
    W = rng.standard_normal((d_z, d_p)) / np.sqrt(d_p)
    z_ref = 0.5 * rng.standard_normal(d_z)
    system = SyntheticSystem(kappa, c, m, W, z_ref)

    calib = gen_pose_signal(int(rng.integers(2**31)), calib_frames, 0)
    desc = descriptor_sequence(calib, group_map)
    zs = simulate(system, desc).targets
    spread = zs.std(axis=0)
    system.W_pose = W / spread[:, None]
    return system


@dataclass
class SyntheticDataset:
    clips: list
    motions: list
    system: SyntheticSystem
    meta: dict = field(default_factory=dict)


def make_dataset(system: SyntheticSystem, n_clips, n_frames, quiescent_tail=0, seed=0, group_map=None, noise_std=0.0):
    """Clips of motion + descriptors + simulated latents, reproducible from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_clips)
    clips, motions = [], []
    for s in seeds:
        motion = gen_pose_signal(int(s), n_frames, quiescent_tail)
        desc = descriptor_sequence(motion, group_map)
        rng = np.random.Generator(np.random.PCG64(int(s) + 1))
        clips.append(simulate(system, desc, noise_std, rng if noise_std > 0 else None))
        motions.append(motion)
    meta = {
        "seed": seed,
        "n_clips": n_clips,
        "n_frames": n_frames,
        "quiescent_tail": quiescent_tail,
        "noise_std": noise_std,
    }
    return SyntheticDataset(clips, motions, system, meta)


def inverse_softplus(y):
    """``x`` with ``softplus(x) = y`` for ``y > 0``."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def frozen_force_model(kappa, c, m, W_pose=None, z_ref=None, d_p=96, dt=1.0, variant="full") -> DynamicsModel:
    """A dynamics model whose heads ignore the state: ``g = W_pose f`` and constant ``kappa, c, m``.

    Each head is a single affine layer. The softplus heads reproduce the
    requested constants up to rounding; read the realized values back with
    ``softplus(bias)``.
    """
    kappa, c, m = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (kappa, c, m))
    d_z = kappa.shape[0]
    n_in = d_p + 2 * d_z + 1
    w_g = np.zeros((d_z, n_in))
    if W_pose is not None:
        w_g[:, :d_p] = W_pose
    heads = {"g": nn.DenseNet([w_g], [np.zeros(d_z)], HEAD_ACTIVATION["g"])}
    for name, val in (("kappa", kappa), ("c", c), ("m", m)):
        heads[name] = nn.DenseNet([np.zeros((d_z, n_in))], [inverse_softplus(val)], HEAD_ACTIVATION[name])
    return DynamicsModel(heads, np.zeros(d_z) if z_ref is None else z_ref, dt, variant, d_p)


__all__ = [
    "SyntheticDataset",
    "SyntheticSystem",
    "frozen_force_model",
    "gen_pose_signal",
    "inverse_softplus",
    "make_dataset",
    "make_system",
    "matrix_power_trajectory",
    "simulate",
    "spectral_radius",
    "transition_matrix",
]
