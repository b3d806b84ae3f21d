"""Estimator front-end for the latent dynamics model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .dynamics import VARIANTS, ForceGains, LatentState, init_dynamics_model, rollout
from .exceptions import ConfigError, DimensionError
from .metrics import teacher_forced_mse
from .training import CurriculumSchedule, TrainConfig, TrainingClip, train


def check_sequences(X, name="X", n_features=None):
    """Coerce one (T, D) array or a list of them into a list of float arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise DimensionError(f"{name} must be a 2-D array or a non-empty list of 2-D arrays")
    out = [check_array(x, dtype=np.float64, ensure_min_samples=1, input_name=name) for x in X]
    widths = {x.shape[1] for x in out}
    if len(widths) != 1:
        raise DimensionError(f"all {name} sequences must have the same width, got {sorted(widths)}")
    if n_features is not None and out[0].shape[1] != n_features:
        raise DimensionError(f"{name} has {out[0].shape[1]} columns, expected {n_features}")
    return out


class LatentDynamicsRegressor(BaseEstimator):
    """Learns ``descriptors -> latent trajectory`` with a spring-damper model.

    ``fit(X, y)`` takes pose-descriptor sequences ``X`` (each T x d_p) and the
    frame-aligned latent targets ``y`` (each T x d_z). ``predict(X)`` rolls the
    model out from rest over every descriptor sequence.

    Parameters
    ----------
    variant : {"full", "direct_latent", "velocity", "accel_no_spring"}
    hidden_width, n_hidden : int
        Size of each of the four force heads.
    epochs, batch_size, lr : training budget (one Adam step per batch).
    horizon_start, horizon_end, tf_start, tf_end : curriculum endpoints.
    velocity_reset : bool
        Reset ``v`` to the target finite difference on teacher forcing.
    sampling : {"uniform", "sweep"}
        Window sampling policy per epoch.
    rest_frame : int
        Frame of the first sequence whose target becomes ``z_ref``.
    init_scale : float
        Scale of the initial output layers.
    random_state : int
    """

    def __init__(self, variant="full", hidden_width=256, n_hidden=4, epochs=1500, batch_size=256, lr=5e-5,
                 horizon_start=4, horizon_end=50, tf_start=0.9, tf_end=0.02, velocity_reset=True,
                 sampling="uniform", rest_frame=0, init_scale=1e-2, random_state=0):
        self.variant = variant
        self.hidden_width = hidden_width
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.horizon_start = horizon_start
        self.horizon_end = horizon_end
        self.tf_start = tf_start
        self.tf_end = tf_end
        self.velocity_reset = velocity_reset
        self.sampling = sampling
        self.rest_frame = rest_frame
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = check_sequences(X, "X")
        y = check_sequences(y, "y")
        if len(X) != len(y):
            raise DimensionError(f"got {len(X)} descriptor sequences but {len(y)} target sequences")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        clips = [TrainingClip(t, d) for d, t in zip(X, y)]
        seed = 0 if self.random_state is None else int(self.random_state)
        d_z = y[0].shape[1]
        model = init_dynamics_model(d_z, y[0][self.rest_frame], X[0].shape[1], self.hidden_width, self.n_hidden,
                                    seed, self.variant, output_scale=self.init_scale)
        config = TrainConfig(self.epochs, self.batch_size, self.lr, seed, self.velocity_reset, self.sampling)
        schedule = CurriculumSchedule(max(self.epochs, 1), self.horizon_start, self.horizon_end,
                                      self.tf_start, self.tf_end)
        state = train(model, clips, config, schedule)
        self.model_ = state.model
        self.history_ = state.history
        self.optimizer_ = state.optimizer
        self.n_features_in_ = X[0].shape[1]
        self.n_outputs_ = d_z
        return self

    def predict(self, X, init_latent=None, gains: ForceGains | None = None):
        """Latent trajectories, one (T, d_z) array per sequence (a single array for 2-D input)."""
        check_is_fitted(self, "model_")
        single = isinstance(X, np.ndarray) and X.ndim == 2
        X = check_sequences(X, "X", self.n_features_in_)
        init = None
        if init_latent is not None:
            z0 = np.asarray(init_latent, dtype=np.float64)
            if z0.shape != (self.n_outputs_,):
                raise DimensionError(f"init_latent must have shape ({self.n_outputs_},)")
            init = LatentState(z0, np.zeros_like(z0))
        out = [rollout(self.model_, x, init, gains)[0] for x in X]
        return out[0] if single else out

    def score(self, X, y):
        """Negative mean teacher-forced one-step MSE (higher is better)."""
        check_is_fitted(self, "model_")
        X = check_sequences(X, "X", self.n_features_in_)
        y = check_sequences(y, "y", self.n_outputs_)
        clips = [TrainingClip(t, d) for d, t in zip(X, y)]
        return -float(teacher_forced_mse(self.model_, clips).mean())
