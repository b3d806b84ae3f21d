"""Spring-damper latent dynamics driven by pose descriptors.

One step, per latent dimension::

    a  = (pose_gain * g - damp_gain * c * v - spring_gain * kappa * (z - z_ref)) / m
    v' = v + dt * a
    z' = z + dt * v'          # semi-implicit: position uses the new velocity

``g, kappa, c, m`` come from four MLP heads fed ``[f_pose; z; v; |v|]``.
All functions here accept plain arrays or tape variables, so the same code
is used for inference and for backpropagation through a rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import neural as nn
from .exceptions import ConfigError, DimensionError, DivergenceError

HEADS = ("g", "kappa", "c", "m")
HEAD_ACTIVATION = {"g": "linear", "kappa": "softplus", "c": "softplus", "m": "softplus"}
VARIANTS = ("full", "direct_latent", "velocity", "accel_no_spring")
VARIANT_HEADS = {
    "full": HEADS,
    "direct_latent": ("g",),
    "velocity": ("g",),
    "accel_no_spring": ("g", "m"),
}
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class ForceGains:
    """Global multipliers on the pose, damping and spring forces."""

    pose: float = 1.0
    damp: float = 1.0
    spring: float = 1.0

    def __post_init__(self):
        for name in ("pose", "damp", "spring"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise ConfigError(f"{name} gain must be a finite non-negative number, got {val}")
            object.__setattr__(self, name, float(val))


@dataclass
class LatentState:
    z: object
    v: object


@dataclass
class ForceParams:
    g: object
    kappa: object
    c: object
    m: object


@dataclass
class DynamicsModel:
    """Four force heads plus the rest latent.

    Each head maps ``d_p + 2 d_z + 1`` inputs to ``d_z`` outputs; ``kappa``,
    ``c`` and ``m`` end in softplus.
    """

    heads: dict
    z_ref: np.ndarray
    dt: float = 1.0
    variant: str = "full"
    d_p: int = 96
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown dynamics variant {self.variant!r}; expected one of {VARIANTS}")
        if set(self.heads) != set(HEADS):
            raise ConfigError(f"model needs heads {HEADS}, got {sorted(self.heads)}")
        self.z_ref = np.asarray(self.z_ref, dtype=np.float64)
        d_z = self.z_ref.shape[0]
        for name in HEADS:
            net = self.heads[name]
            if net.n_inputs != self.d_p + 2 * d_z + 1 or net.n_outputs != d_z:
                raise DimensionError(
                    f"head {name!r} maps {net.n_inputs}->{net.n_outputs}, "
                    f"expected {self.d_p + 2 * d_z + 1}->{d_z}"
                )
            if net.head != HEAD_ACTIVATION[name]:
                raise ConfigError(f"head {name!r} must use a {HEAD_ACTIVATION[name]} output")

    @property
    def d_z(self) -> int:
        return self.z_ref.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.d_p + 2 * self.d_z + 1

    @property
    def active_heads(self):
        return VARIANT_HEADS[self.variant]

    def rest_state(self) -> LatentState:
        return LatentState(self.z_ref.copy(), np.zeros(self.d_z))

    def parameters(self):
        """``{head: [w0, b0, w1, b1, ...]}`` for every head."""
        return {name: self.heads[name].parameters() for name in HEADS}

    def with_parameters(self, params):
        heads = {name: self.heads[name].with_parameters(params[name]) if name in params else self.heads[name] for name in HEADS}
        return DynamicsModel(heads, self.z_ref.copy(), self.dt, self.variant, self.d_p, dict(self.meta))


def init_dynamics_model(d_z, z_ref=None, d_p=96, hidden_width=256, n_hidden=4, seed=0, variant="full", dt=1.0,
                        output_scale=1e-2):
    """Fresh model with Kaiming-uniform heads drawn in the order g, kappa, c, m.

    The small default ``output_scale`` starts every head near its bias, i.e.
    ``g ~ 0`` and ``kappa = c = m ~ ln 2``, which is a stable, over-damped
    configuration; full-scale output layers can start with near-zero mass.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    widths = [d_p + 2 * d_z + 1] + [hidden_width] * n_hidden + [d_z]
    heads = {
        name: nn.init_dense_net(widths, head=HEAD_ACTIVATION[name], rng=rng, output_scale=output_scale)
        for name in HEADS
    }
    if z_ref is None:
        z_ref = np.zeros(d_z)
    return DynamicsModel(heads, z_ref, dt, variant, d_p)


def state_feature(z, v):
    """``[z; v; |v|]``; tape-aware twin of :func:`latdyn.features.state_feature`."""
    if np.shape(nn.value_of(z)) != np.shape(nn.value_of(v)):
        raise DimensionError("z and v must have matching shapes")
    return nn.concat([z, v, nn.norm(v)])


def predict_forces(model: DynamicsModel, f_pose, f_state, params=None, heads=HEADS) -> ForceParams:
    """Evaluate the requested heads on ``[f_pose; f_state]``; others come back as None."""
    if np.shape(nn.value_of(f_pose))[-1] != model.d_p:
        raise DimensionError(f"pose descriptor must have length {model.d_p}")
    if np.shape(nn.value_of(f_state))[-1] != 2 * model.d_z + 1:
        raise DimensionError(f"state feature must have length {2 * model.d_z + 1}")
    x = nn.concat([f_pose, f_state])
    out = {}
    for name in HEADS:
        if name in heads:
            out[name] = nn.forward(model.heads[name], x, None if params is None else params[name])
        else:
            out[name] = None
    return ForceParams(**out)


def force_terms(state: LatentState, forces: ForceParams, gains: ForceGains, z_ref):
    """The three gained force vectors ``(pose, damping, spring)``."""
    f_pose = gains.pose * forces.g
    f_damp = gains.damp * (forces.c * state.v)
    f_spring = gains.spring * (forces.kappa * (state.z - z_ref))
    return f_pose, f_damp, f_spring


def step(state: LatentState, forces: ForceParams, gains: ForceGains | None = None, z_ref=0.0, dt=1.0) -> LatentState:
    """One semi-implicit Euler step of the spring-damper update."""
    if gains is None:
        gains = ForceGains()
    f_pose, f_damp, f_spring = force_terms(state, forces, gains, z_ref)
    a = (f_pose - f_damp - f_spring) / forces.m
    v_next = state.v + dt * a
    z_next = state.z + dt * v_next
    return LatentState(z_next, v_next)


def step_variant(variant, model: DynamicsModel, state: LatentState, f_pose, gains=None, params=None) -> LatentState:
    """Advance ``state`` by one frame under the chosen dynamics variant.

    * ``full``: spring-damper update (:func:`step`).
    * ``direct_latent``: the g head predicts ``z'`` itself from ``(f_pose, z)``;
      ``v' = (z' - z)/dt`` is bookkeeping and is not fed back.
    * ``velocity``: the g head predicts ``v'``; ``z' = z + dt v'``.
    * ``accel_no_spring``: ``a = pose_gain * g / m`` without spring or damping.

    Gains only affect ``full`` and ``accel_no_spring``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown dynamics variant {variant!r}; expected one of {VARIANTS}")
    if gains is None:
        gains = ForceGains()
    if variant == "direct_latent":
        # v is bookkeeping only here; the head sees a zero velocity block
        f_state = state_feature(state.z, np.zeros(np.shape(nn.value_of(state.v))))
    else:
        f_state = state_feature(state.z, state.v)
    forces = predict_forces(model, f_pose, f_state, params, VARIANT_HEADS[variant])
    dt = model.dt
    if variant == "full":
        return step(state, forces, gains, model.z_ref, dt)
    if variant == "direct_latent":
        z_next = forces.g
        return LatentState(z_next, (z_next - state.z) / dt)
    if variant == "velocity":
        v_next = forces.g
        return LatentState(state.z + dt * v_next, v_next)
    a = (gains.pose * forces.g) / forces.m
    v_next = state.v + dt * a
    return LatentState(state.z + dt * v_next, v_next)


def integrate(step_fn: Callable, descriptors, init: LatentState, limit=DIVERGENCE_LIMIT):
    """Run ``state = step_fn(state, descriptors[t])`` for every frame.

    Returns ``(Z, V)`` arrays of shape (T, d_z). Raises :class:`DivergenceError`
    at the first non-finite state or one with ``max|z| > limit``.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[0] == 0:
        raise DimensionError(f"need a non-empty (T, d_p) descriptor array, got shape {descriptors.shape}")
    d_z = np.shape(init.z)[-1]
    zs = np.empty((descriptors.shape[0], d_z))
    vs = np.empty_like(zs)
    state = LatentState(np.asarray(init.z, dtype=np.float64), np.asarray(init.v, dtype=np.float64))
    for t, f in enumerate(descriptors):
        state = step_fn(state, f)
        if not (np.all(np.isfinite(state.z)) and np.all(np.isfinite(state.v))):
            raise DivergenceError(f"rollout produced a non-finite state at step {t}", step=t)
        if np.max(np.abs(state.z)) > limit:
            raise DivergenceError(f"rollout exceeded |z| > {limit:g} at step {t}", step=t)
        zs[t] = state.z
        vs[t] = state.v
    return zs, vs


def rollout(model: DynamicsModel, descriptors, init: LatentState | None = None, gains: ForceGains | None = None):
    """Autoregressive rollout; defaults to starting at rest ``(z_ref, 0)``.

    Step ``t`` reads ``descriptors[t]`` and the state produced by step ``t-1``
    (the initial state for ``t = 0``). Returns ``(Z, V)``, each (T, d_z).
    """
    if init is None:
        init = model.rest_state()
    if np.shape(init.z) != (model.d_z,) or np.shape(init.v) != (model.d_z,):
        raise DimensionError(f"initial state must have length {model.d_z}")
    variant = model.variant

    def step_fn(state, f):
        return step_variant(variant, model, state, f, gains)

    return integrate(step_fn, descriptors, init)
