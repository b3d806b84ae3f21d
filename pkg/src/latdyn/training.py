"""Curriculum teacher-forcing training of a :class:`DynamicsModel`.

A window ``(start, horizon)`` initializes the state from the targets at frame
``start - 1`` and predicts frames ``start .. start + horizon - 1``. After each
step the squared error against the target is recorded; then, with probability
``p_tf``, the propagated state is replaced by the target state (teacher
forcing). Loss is the mean over steps and latent dimensions.

Under the default ``sampling="uniform"`` policy one epoch is one batch:
``batch_size`` windows drawn uniformly, without replacement, from all valid
``(clip, start)`` pairs, followed by a single Adam step. ``sampling="sweep"``
instead cuts every clip into consecutive windows and takes one Adam step per
batch of them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import neural as nn
from .dynamics import DynamicsModel, LatentState, step_variant
from .exceptions import ConfigError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class TrainingClip:
    """Frame-aligned latent targets (T, d_z) and pose descriptors (T, d_p)."""

    targets: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.targets.ndim != 2 or self.descriptors.ndim != 2:
            raise DimensionError("targets and descriptors must both be 2-D")
        if self.targets.shape[0] != self.descriptors.shape[0]:
            raise DimensionError(
                f"targets have {self.targets.shape[0]} frames but descriptors have {self.descriptors.shape[0]}"
            )
        if self.targets.shape[0] < 2:
            raise DimensionError("a training clip needs at least 2 frames")
        if not (np.all(np.isfinite(self.targets)) and np.all(np.isfinite(self.descriptors))):
            raise ValueError("training clip contains non-finite values")

    def __len__(self):
        return self.targets.shape[0]

    def velocities(self, dt=1.0):
        """Finite-difference target velocities; frame 0 is taken to be at rest."""
        cache = self.__dict__.setdefault("_velocity_cache", {})
        if dt not in cache:
            v = np.zeros_like(self.targets)
            v[1:] = (self.targets[1:] - self.targets[:-1]) / dt
            cache[dt] = v
        return cache[dt]


@dataclass(frozen=True)
class CurriculumSchedule:
    total_epochs: int
    horizon_start: int = 4
    horizon_end: int = 50
    tf_start: float = 0.9
    tf_end: float = 0.02

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if not 1 <= self.horizon_start <= self.horizon_end:
            raise ConfigError("need 1 <= horizon_start <= horizon_end")
        if not 0.0 <= self.tf_end <= self.tf_start <= 1.0:
            raise ConfigError("need 0 <= tf_end <= tf_start <= 1")


def schedule_at(schedule: CurriculumSchedule, epoch):
    """Linear curriculum: ``(horizon, p_tf)`` at ``epoch`` in ``[0, total_epochs - 1]``.

    The horizon is rounded down. Fractional epochs are accepted.
    """
    last = schedule.total_epochs - 1
    if not 0 <= epoch <= last:
        raise ConfigError(f"epoch {epoch} outside [0, {last}]")
    frac = epoch / last if last > 0 else 0.0
    span = schedule.horizon_end - schedule.horizon_start
    horizon = schedule.horizon_start + math.floor(span * frac + 1e-9)
    p_tf = (1.0 - frac) * schedule.tf_start + frac * schedule.tf_end
    return int(horizon), float(p_tf)


SAMPLING_POLICIES = ("uniform", "sweep")


@dataclass
class TrainConfig:
    epochs: int = 1500
    batch_size: int = 256
    lr: float = 5e-5
    seed: int = 0
    velocity_reset: bool = True
    sampling: str = "uniform"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if self.sampling not in SAMPLING_POLICIES:
            raise ConfigError(f"unknown sampling policy {self.sampling!r}; expected one of {SAMPLING_POLICIES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    """Everything needed to resume training bit-exactly."""

    model: DynamicsModel
    optimizer: nn.AdamState
    epoch: int = 0
    history: list = field(default_factory=list)  # (epoch, horizon, p_tf, loss)


def squared_error_mean(pred, target):
    """Mean over steps and dimensions of squared error (arrays of shape (..., d_z))."""
    pred = np.asarray(pred, dtype=np.float64)
    return float(np.mean((pred - np.asarray(target, dtype=np.float64)) ** 2))


def _gather(clips, windows, horizon, dt):
    """Stack window data: init z/v (B, d_z), targets/velocities (h, B, d_z), descriptors (h, B, d_p)."""
    idx = [np.arange(s, s + horizon) for _, s in windows]
    targets = np.stack([clips[c].targets[i] for (c, _), i in zip(windows, idx)], axis=1)
    desc = np.stack([clips[c].descriptors[i] for (c, _), i in zip(windows, idx)], axis=1)
    vel_all = [clips[c].velocities(dt) for c, _ in windows]
    vels = np.stack([v[i] for v, i in zip(vel_all, idx)], axis=1)
    z0 = np.stack([clips[c].targets[s - 1] for c, s in windows])
    v0 = np.stack([v[s - 1] for v, (_, s) in zip(vel_all, windows)])
    return z0, v0, targets, vels, desc


def batch_loss(model: DynamicsModel, clips, windows, horizon, p_tf, rng, params=None, velocity_reset=True):
    """Mean squared rollout error over a batch of equal-horizon windows.

    With ``params`` given as tape variables the result is a tape variable.
    Teacher-forcing draws come from ``rng`` as one (horizon, B) uniform block.
    """
    for c, s in windows:
        if not 1 <= s <= len(clips[c]) - horizon:
            raise ConfigError(f"window (start={s}, horizon={horizon}) does not fit clip {c} of length {len(clips[c])}")
    z0, v0, targets, vels, desc = _gather(clips, windows, horizon, model.dt)
    force = rng.random((horizon, len(windows))) < p_tf
    state = LatentState(z0, v0)
    sq = 0.0
    for t in range(horizon):
        state = step_variant(model.variant, model, state, desc[t], None, params)
        sq = sq + nn.total(nn.square(state.z - targets[t]))
        if t < horizon - 1 and force[t].any():
            mask = force[t][:, None]
            z = nn.where(mask, targets[t], state.z)
            v = nn.where(mask, vels[t], state.v) if velocity_reset else state.v
            state = LatentState(z, v)
    return sq / float(horizon * len(windows) * model.d_z)


def rollout_loss(model: DynamicsModel, clip: TrainingClip, window, p_tf, rng, velocity_reset=True) -> float:
    """Teacher-forced rollout loss of one window ``(start, horizon)``."""
    start, horizon = window
    return float(nn.value_of(batch_loss(model, [clip], [(0, start)], horizon, p_tf, rng, None, velocity_reset)))


def loss_and_grads(model: DynamicsModel, clips, windows, horizon, p_tf, rng, velocity_reset=True):
    """Loss value and ``{head: [grad arrays]}`` for the heads the variant uses."""
    tape = nn.Tape()
    params = model.parameters()
    watched = {name: [tape.watch(p) for p in params[name]] for name in model.active_heads}
    loss = batch_loss(model, clips, windows, horizon, p_tf, rng, watched, velocity_reset)
    flat = [v for name in model.active_heads for v in watched[name]]
    grads = nn.backward(tape, loss, flat)
    out, i = {}, 0
    for name in model.active_heads:
        n = len(watched[name])
        out[name] = grads[i : i + n]
        i += n
    return float(loss.value), out


def epoch_rng(seed, epoch):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch)])))


def valid_windows(clips, horizon):
    """All ``(clip, start)`` pairs whose window fits, in clip-major order."""
    return [(c, s) for c, clip in enumerate(clips) for s in range(1, len(clip) - horizon + 1)]


def sample_windows(clips, horizon, batch_size, rng):
    """``batch_size`` windows drawn uniformly without replacement.

    When fewer valid windows exist than requested, every window is used once
    per pass and passes are repeated until the batch is full.
    """
    pool = valid_windows(clips, horizon)
    if not pool:
        raise ConfigError(f"no clip is long enough for a rollout horizon of {horizon}")
    if len(pool) >= batch_size:
        idx = rng.choice(len(pool), size=batch_size, replace=False)
    else:
        passes = -(-batch_size // len(pool))
        idx = np.concatenate([rng.permutation(len(pool)) for _ in range(passes)])[:batch_size]
    return [pool[i] for i in idx]


def epoch_windows(clips, horizon, rng):
    """Consecutive windows covering each clip from a random offset, shuffled."""
    windows = []
    for c, clip in enumerate(clips):
        last_start = len(clip) - horizon
        if last_start < 1:
            continue
        offset = 1 + int(rng.integers(0, min(horizon, last_start)))
        windows += [(c, s) for s in range(offset, last_start + 1, horizon)]
    if not windows:
        raise ConfigError(f"no clip is long enough for a rollout horizon of {horizon}")
    order = rng.permutation(len(windows))
    return [windows[i] for i in order]


def _flat_params(model, heads):
    return [p for name in heads for p in model.parameters()[name]]


def new_train_state(model: DynamicsModel, config: TrainConfig) -> TrainState:
    opt = nn.AdamState.for_params(_flat_params(model, model.active_heads), lr=config.lr)
    return TrainState(model, opt)


def train_epoch(state: TrainState, clips, config: TrainConfig, schedule: CurriculumSchedule) -> float:
    """Run one epoch in place and return its mean batch loss."""
    epoch = state.epoch
    horizon, p_tf = schedule_at(schedule, epoch)
    rng = epoch_rng(config.seed, epoch)
    if config.sampling == "uniform":
        windows = sample_windows(clips, horizon, config.batch_size, rng)
    else:
        windows = epoch_windows(clips, horizon, rng)
    model = state.model
    heads = model.active_heads
    losses = []
    for b in range(0, len(windows), config.batch_size):
        batch = windows[b : b + config.batch_size]
        loss, grads = loss_and_grads(model, clips, batch, horizon, p_tf, rng, config.velocity_reset)
        flat_grads = [g for name in heads for g in grads[name]]
        updated = nn.adam_step(state.optimizer, _flat_params(model, heads), flat_grads)
        new_params, i = {}, 0
        for name in heads:
            n = len(model.parameters()[name])
            new_params[name] = updated[i : i + n]
            i += n
        model = model.with_parameters(new_params)
        losses.append(loss)
    state.model = model
    mean_loss = float(np.mean(losses))
    state.history.append((epoch, horizon, p_tf, mean_loss))
    state.epoch += 1
    return mean_loss


def train(model: DynamicsModel, clips, config: TrainConfig, schedule: CurriculumSchedule | None = None,
          state: TrainState | None = None, stop_epoch=None, callback=None) -> TrainState:
    """Train until ``stop_epoch`` (default ``config.epochs``).

    Pass a previous ``state`` to resume; the per-epoch RNG depends only on
    ``(seed, epoch)``, so resuming reproduces an uninterrupted run exactly.
    """
    if not clips:
        raise ConfigError("training needs at least one clip")
    if schedule is None:
        schedule = CurriculumSchedule(max(config.epochs, 1))
    if state is None:
        state = new_train_state(model, config)
    stop = config.epochs if stop_epoch is None else min(stop_epoch, config.epochs)
    while state.epoch < stop:
        loss = train_epoch(state, clips, config, schedule)
        logger.debug("epoch %d loss %.6g", state.epoch - 1, loss)
        if callback is not None:
            callback(state)
    return state
