"""Evaluation metrics for trained dynamics models.

All errors are returned per latent dimension so callers can normalize by the
per-dimension target variance.
"""

from __future__ import annotations

import time

import numpy as np

from .dynamics import DynamicsModel, ForceGains, LatentState, rollout, step_variant
from .exceptions import ConfigError
from .training import TrainingClip


def target_variance(clips):
    """Per-dimension population variance of all target frames."""
    return np.concatenate([c.targets for c in clips]).var(axis=0)


def _window_stack(clip: TrainingClip, starts, horizon, dt):
    idx = np.asarray(starts)[:, None] + np.arange(horizon)[None]
    v = clip.velocities(dt)
    return (
        clip.targets[np.asarray(starts) - 1],
        v[np.asarray(starts) - 1],
        np.swapaxes(clip.targets[idx], 0, 1),
        np.swapaxes(clip.descriptors[idx], 0, 1),
    )


def window_errors(model: DynamicsModel, clip: TrainingClip, horizon, starts=None, gains=None):
    """Squared errors of free rollouts from ground-truth states.

    Each window starts from the target state ``(z*_{s-1}, v*_{s-1})`` and runs
    ``horizon`` steps without teacher forcing. ``starts`` defaults to
    non-overlapping windows ``1, 1 + horizon, ...``. Returns an array of shape
    (horizon, n_windows, d_z); empty along axis 1 when the clip is too short.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if starts is None:
        starts = np.arange(1, len(clip) - horizon + 1, horizon)
    starts = np.asarray(starts, dtype=int)
    if starts.size == 0:
        return np.zeros((horizon, 0, model.d_z))
    z0, v0, targets, desc = _window_stack(clip, starts, horizon, model.dt)
    state = LatentState(z0, v0)
    out = np.empty_like(targets)
    for t in range(horizon):
        state = step_variant(model.variant, model, state, desc[t], gains)
        out[t] = (state.z - targets[t]) ** 2
    return out


def teacher_forced_mse(model: DynamicsModel, clips, gains=None):
    """Per-dimension one-step MSE from every ground-truth state."""
    errs = [window_errors(model, c, 1, np.arange(1, len(c)), gains).reshape(-1, model.d_z) for c in clips]
    return np.concatenate(errs).mean(axis=0)


def free_rollout_mse(model: DynamicsModel, clips, horizon, gains=None):
    """Per-dimension MSE over non-overlapping ``horizon``-step free rollouts.

    Returns NaNs when no clip is long enough.
    """
    errs = [window_errors(model, c, horizon, None, gains).reshape(-1, model.d_z) for c in clips]
    errs = np.concatenate(errs)
    if errs.shape[0] == 0:
        return np.full(model.d_z, np.nan)
    return errs.mean(axis=0)


def rest_return(model: DynamicsModel, clip: TrainingClip, quiescent_tail, gains: ForceGains | None = None):
    """Distance to ``z_ref`` at motion cessation and at the end of the clip.

    The clip is rolled out freely from rest. Cessation is the first frame of
    the quiescent tail. Returns ``(at_cessation, terminal)``.
    """
    if not 0 < quiescent_tail < len(clip):
        raise ConfigError(f"quiescent tail {quiescent_tail} must lie in (0, {len(clip)})")
    zs, _ = rollout(model, clip.descriptors, None, gains)
    dist = np.linalg.norm(zs - model.z_ref, axis=1)
    return float(dist[len(clip) - quiescent_tail]), float(dist[-1])


def rollout_throughput(model: DynamicsModel, n_steps=200, seed=0, repeats=3):
    """Best-of-``repeats`` single-sequence rollout speed in steps per second."""
    rng = np.random.Generator(np.random.PCG64(seed))
    desc = rng.standard_normal((n_steps, model.d_p))
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        rollout(model, desc)
        best = min(best, time.perf_counter() - t0)
    return n_steps / best
