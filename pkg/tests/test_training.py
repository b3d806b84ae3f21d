import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latdyn import neural as nn
from latdyn.dynamics import init_dynamics_model
from latdyn.exceptions import ConfigError, DimensionError
from latdyn.metrics import window_errors
from latdyn.oracle import SyntheticSystem, frozen_force_model, simulate
from latdyn.training import (
    CurriculumSchedule,
    TrainConfig,
    TrainingClip,
    batch_loss,
    epoch_rng,
    loss_and_grads,
    rollout_loss,
    sample_windows,
    schedule_at,
    train,
    valid_windows,
)

D_P = 6


def make_clips(n=3, T=40, d_z=2, seed=0):
    rng = np.random.default_rng(seed)
    return [TrainingClip(np.cumsum(rng.normal(0, 0.1, (T, d_z)), 0), rng.normal(size=(T, D_P))) for _ in range(n)]


def small_model(d_z=2, seed=0, **kw):
    return init_dynamics_model(d_z, d_p=D_P, hidden_width=8, n_hidden=2, seed=seed, **kw)


class TestSchedule:
    def test_endpoints(self):
        s = CurriculumSchedule(1500)
        assert schedule_at(s, 0) == (4, 0.9)
        h, p = schedule_at(s, 1499)
        assert h == 50 and p == pytest.approx(0.02, abs=1e-15)

    def test_midpoint(self):
        h, p = schedule_at(CurriculumSchedule(1500), 749.5)
        assert h == 27 and p == pytest.approx(0.46, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 3000))
    def test_monotone(self, total):
        s = CurriculumSchedule(total)
        vals = [schedule_at(s, e) for e in range(0, total, max(1, total // 50))] + [schedule_at(s, total - 1)]
        assert all(a[0] <= b[0] and a[1] >= b[1] for a, b in zip(vals, vals[1:]))
        assert vals[-1][0] == 50

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            schedule_at(CurriculumSchedule(10), 10)
        with pytest.raises(ConfigError):
            schedule_at(CurriculumSchedule(10), -1)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            CurriculumSchedule(0)
        with pytest.raises(ConfigError):
            CurriculumSchedule(10, horizon_start=5, horizon_end=4)


class TestClip:
    def test_validation(self):
        with pytest.raises(DimensionError):
            TrainingClip(np.zeros((5, 2)), np.zeros((4, 6)))
        with pytest.raises(DimensionError):
            TrainingClip(np.zeros((1, 2)), np.zeros((1, 6)))
        with pytest.raises(ValueError):
            TrainingClip(np.full((3, 2), np.nan), np.zeros((3, 6)))

    def test_velocities(self):
        clip = TrainingClip(np.array([[0.0], [1.0], [3.0]]), np.zeros((3, 1)))
        np.testing.assert_array_equal(clip.velocities(), [[0.0], [1.0], [2.0]])


class TestLoss:
    def test_perfect_model_zero(self):
        rng = np.random.default_rng(1)
        w = np.zeros((2, D_P))
        w[0, 1], w[1, 4] = 0.5, -0.25  # one entry per row: sums are exact
        model = frozen_force_model([0.3, 0.1], [0.2, 0.4], [1.0, 1.5], W_pose=w, z_ref=np.array([0.1, 0.0]), d_p=D_P)
        k, c, m = (nn.softplus(model.heads[h].biases[0]) for h in ("kappa", "c", "m"))
        system = SyntheticSystem(k, c, m, w, model.z_ref)
        clip = simulate(system, rng.normal(size=(30, D_P)))
        assert rollout_loss(model, clip, (2, 20), 0.0, np.random.default_rng(0)) == 0.0
        # forced velocities are target differences, equal to the true ones up to roundoff
        for p_tf in (0.5, 1.0):
            assert rollout_loss(model, clip, (2, 20), p_tf, np.random.default_rng(0)) < 1e-28

    def test_arithmetic(self):
        model = frozen_force_model([1.0], [1.0], [1.0], d_p=D_P, variant="velocity")
        model.heads["g"].biases[0] = np.array([1.0])
        clip = TrainingClip(np.zeros((3, 1)), np.zeros((3, D_P)))
        assert rollout_loss(model, clip, (1, 2), 0.0, np.random.default_rng(0)) == 2.5

    def test_full_teacher_forcing_is_one_step(self):
        clips = make_clips()
        model = small_model()
        loss = rollout_loss(model, clips[0], (1, 30), 1.0, np.random.default_rng(0))
        one_step = window_errors(model, clips[0], 1, np.arange(1, 31))
        assert abs(loss - one_step.mean()) < 1e-12

    def test_horizon_one_regression(self):
        clips = make_clips()
        model = small_model()
        windows = [(0, s) for s in range(1, 39)]
        a = float(nn.value_of(batch_loss(model, clips, windows, 1, 1.0, np.random.default_rng(0))))
        b = float(nn.value_of(batch_loss(model, clips, windows, 1, 0.0, np.random.default_rng(0))))
        direct = window_errors(model, clips[0], 1, np.arange(1, 39)).mean()
        assert a == b and abs(a - direct) < 1e-12

    def test_forcing_does_not_change_measurement(self):
        clips = make_clips()
        model = small_model()
        # the first step is measured before any replacement, whatever p_tf is
        for p in (0.0, 1.0):
            l1 = rollout_loss(model, clips[0], (5, 1), p, np.random.default_rng(3))
            assert l1 == rollout_loss(model, clips[0], (5, 1), 0.5, np.random.default_rng(3))

    def test_non_negative(self):
        clips = make_clips()
        assert rollout_loss(small_model(), clips[1], (2, 10), 0.3, np.random.default_rng(0)) >= 0

    def test_window_overflow(self):
        clips = make_clips(T=10)
        with pytest.raises(ConfigError):
            rollout_loss(small_model(), clips[0], (5, 6), 0.0, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            rollout_loss(small_model(), clips[0], (0, 3), 0.0, np.random.default_rng(0))

    def test_gradients_match_finite_differences(self):
        clips = make_clips(n=2, T=12)
        model = small_model(seed=3, output_scale=1.0)
        windows = [(0, 2), (1, 4)]

        def loss_at(flat, draw_seed=7):
            params, i = {}, 0
            for name in model.active_heads:
                n = len(model.parameters()[name])
                params[name] = flat[i : i + n]
                i += n
            m = model.with_parameters(params)
            return float(nn.value_of(batch_loss(m, clips, windows, 5, 0.5, np.random.default_rng(draw_seed))))

        _, grads = loss_and_grads(model, clips, windows, 5, 0.5, np.random.default_rng(7))
        flat = [p for name in model.active_heads for p in model.parameters()[name]]
        analytic = [g for name in model.active_heads for g in grads[name]]
        assert nn.relative_error(analytic, nn.numerical_gradient(loss_at, flat)) < 1e-5


class TestSampling:
    def test_uniform_without_replacement(self):
        clips = make_clips()
        w = sample_windows(clips, 5, 64, np.random.default_rng(0))
        assert len(w) == 64 and len(set(w)) == 64
        pool = set(valid_windows(clips, 5))
        assert set(w) <= pool

    def test_small_pool_repeats_full_passes(self):
        clips = make_clips(n=1, T=8)
        w = sample_windows(clips, 5, 7, np.random.default_rng(0))
        assert len(w) == 7 and set(w) == set(valid_windows(clips, 5))

    def test_no_valid_windows(self):
        with pytest.raises(ConfigError):
            sample_windows(make_clips(T=4), 5, 8, np.random.default_rng(0))

    def test_epoch_rng_depends_on_seed_and_epoch(self):
        a = epoch_rng(1, 2).random()
        assert a == epoch_rng(1, 2).random()
        assert a != epoch_rng(1, 3).random() and a != epoch_rng(2, 2).random()


class TestTrain:
    def config(self, **kw):
        return TrainConfig(**{"epochs": 6, "batch_size": 8, "lr": 1e-3, "seed": 4, **kw})

    def test_zero_epochs_unchanged(self):
        model = small_model()
        state = train(model, make_clips(), self.config(epochs=0))
        for name, ps in model.parameters().items():
            for a, b in zip(ps, state.model.parameters()[name]):
                np.testing.assert_array_equal(a, b)
        assert state.history == []

    def test_deterministic_and_resumable(self):
        clips = make_clips()
        cfg = self.config()
        sched = CurriculumSchedule(6, 2, 8)
        full = train(small_model(), clips, cfg, sched)
        again = train(small_model(), clips, cfg, sched)
        half = train(small_model(), clips, cfg, sched, stop_epoch=3)
        resumed = train(half.model, clips, cfg, sched, state=half)
        for other in (again, resumed):
            for name in full.model.parameters():
                for a, b in zip(full.model.parameters()[name], other.model.parameters()[name]):
                    assert a.tobytes() == b.tobytes()
            assert other.history == full.history
        assert len(full.history) == 6
        assert [h[1] for h in full.history] == [schedule_at(sched, e)[0] for e in range(6)]

    def test_training_reduces_loss(self):
        clips = make_clips()
        model = small_model()
        rng = np.random.default_rng(0)
        before = float(nn.value_of(batch_loss(model, clips, valid_windows(clips, 4), 4, 0.0, rng)))
        state = train(model, clips, self.config(epochs=40, batch_size=32), CurriculumSchedule(40, 4, 4))
        after = float(nn.value_of(batch_loss(state.model, clips, valid_windows(clips, 4), 4, 0.0, rng)))
        assert after < before

    def test_sweep_policy_runs(self):
        state = train(small_model(), make_clips(), self.config(epochs=2, sampling="sweep"), CurriculumSchedule(2, 4, 8))
        assert state.optimizer.step > 2

    def test_frozen_heads_untouched_for_variant(self):
        model = small_model(variant="velocity")
        state = train(model, make_clips(), self.config(epochs=2), CurriculumSchedule(2, 4, 8))
        np.testing.assert_array_equal(state.model.heads["kappa"].weights[0], model.heads["kappa"].weights[0])

    def test_bad_inputs(self):
        with pytest.raises(ConfigError):
            train(small_model(), [], self.config())
        with pytest.raises(ConfigError):
            TrainConfig(sampling="random")
        with pytest.raises(ConfigError):
            train(small_model(), make_clips(T=3), self.config(), CurriculumSchedule(6, 4, 50))
