import struct

import numpy as np
import pytest

from latdyn import io
from latdyn.dynamics import init_dynamics_model, rollout
from latdyn.exceptions import FormatError
from latdyn.features import JointGroupMap
from latdyn.latent_space import fit_latent_space
from latdyn.neural import AdamState
from latdyn.oracle import gen_pose_signal


@pytest.fixture(scope="module")
def checkpoint():
    model = init_dynamics_model(3, d_p=96, hidden_width=8, n_hidden=2, seed=1)
    x = np.random.default_rng(0).normal(size=(40, 96))
    ls = fit_latent_space(x, 3)
    opt = AdamState.for_params([p for name in model.active_heads for p in model.parameters()[name]], lr=1e-3)
    opt.step = 7
    return io.Checkpoint(model, ls, opt, 7, [(0, 4, 0.9, 1.5), (1, 5, 0.8, 1.25)], {"seed": 0}, JointGroupMap.default())


class TestContainer:
    def test_round_trip(self):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([-0.0, 1e-300])}
        data = io.pack(b"TEST", {"x": 1}, arrays)
        meta, back = io.unpack(data, b"TEST")
        assert meta == {"x": 1}
        for k in arrays:
            assert back[k].tobytes() == arrays[k].tobytes()
        assert io.pack(b"TEST", meta, back) == data

    def test_refuses_non_finite(self):
        with pytest.raises(ValueError):
            io.pack(b"TEST", {}, {"a": np.array([np.nan])})

    def test_corruption_detected(self):
        data = bytearray(io.dumps_featmat(np.ones((2, 2))))
        data[-40] ^= 1
        with pytest.raises(FormatError, match="checksum"):
            io.loads_featmat(bytes(data))

    def test_truncated(self):
        data = io.dumps_featmat(np.ones((2, 2)))
        with pytest.raises(FormatError):
            io.loads_featmat(data[:10])
        with pytest.raises(FormatError):
            io.loads_featmat(data[:-5])

    def test_wrong_magic(self):
        with pytest.raises(FormatError, match="magic"):
            io.loads_quatseq(io.dumps_featmat(np.ones((2, 2))))

    def test_version(self):
        data = bytearray(io.dumps_featmat(np.ones((2, 2))))
        data[4:8] = struct.pack("<I", 99)
        with pytest.raises(FormatError, match="version 99"):
            io.loads_featmat(bytes(data))


class TestFeatmat:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(1).normal(size=(5, 96))
        io.save_featmat(tmp_path / "x.featmat", m, {"source": "test"})
        back = io.load_featmat(tmp_path / "x.featmat", expect_cols=96)
        assert back.tobytes() == m.tobytes()
        assert io.featmat_meta(tmp_path / "x.featmat") == {"source": "test"}

    def test_width_checked(self):
        with pytest.raises(FormatError, match="95"):
            io.loads_featmat(io.dumps_featmat(np.ones((3, 95))), expect_cols=96)

    def test_rejects_non_matrix(self):
        with pytest.raises(FormatError):
            io.dumps_featmat(np.ones(3))


def test_quatseq_round_trip(tmp_path):
    seq = gen_pose_signal(0, 12)
    io.save_quatseq(tmp_path / "m.quatseq", seq)
    back = io.load_quatseq(tmp_path / "m.quatseq")
    assert back.data.tobytes() == seq.data.tobytes()
    assert io.dumps_quatseq(back) == io.dumps_quatseq(seq)


class TestCheckpoint:
    def test_round_trip_bytes(self, checkpoint):
        data = io.dumps_checkpoint(checkpoint)
        back = io.loads_checkpoint(data)
        assert io.dumps_checkpoint(back) == data
        assert back.epoch == 7 and back.history == checkpoint.history
        assert back.optimizer.step == 7 and back.group_map == checkpoint.group_map

    def test_model_equal(self, checkpoint):
        back = io.loads_checkpoint(io.dumps_checkpoint(checkpoint))
        x = np.linspace(0, 1, 96)
        a, _ = rollout(checkpoint.model, np.tile(x, (5, 1)))
        b, _ = rollout(back.model, np.tile(x, (5, 1)))
        assert a.tobytes() == b.tobytes()

    def test_minimal(self, checkpoint):
        ck = io.Checkpoint(checkpoint.model)
        back = io.loads_checkpoint(io.dumps_checkpoint(ck))
        assert back.latent_space is None and back.optimizer is None and back.history == []

    def test_missing_block(self, checkpoint):
        meta, arrays = io.unpack(io.dumps_checkpoint(checkpoint), io.CHECKPOINT_MAGIC)
        del arrays["head/m/w0"]
        with pytest.raises(FormatError, match="missing"):
            io.loads_checkpoint(io.pack(io.CHECKPOINT_MAGIC, meta, arrays))

    def test_file(self, tmp_path, checkpoint):
        io.save_checkpoint(tmp_path / "a.ldck", checkpoint)
        io.save_checkpoint(tmp_path / "b.ldck", io.load_checkpoint(tmp_path / "a.ldck"))
        assert (tmp_path / "a.ldck").read_bytes() == (tmp_path / "b.ldck").read_bytes()


def test_latent_space_round_trip(tmp_path, checkpoint):
    io.save_latent_space(tmp_path / "ls.bin", checkpoint.latent_space)
    back = io.load_latent_space(tmp_path / "ls.bin")
    assert io.dumps_latent_space(back) == io.dumps_latent_space(checkpoint.latent_space)


def test_loss_csv(tmp_path):
    io.write_loss_csv(tmp_path / "loss.csv", [(0, 4, 0.9, 0.5), (1, 5, 0.8, 0.25)])
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines == ["epoch,horizon,p_tf,loss", "0,4,0.9,0.5", "1,5,0.8,0.25"]
