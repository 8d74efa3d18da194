import numpy as np
import pytest

from spikerate.checkpoint import load_checkpoint
from spikerate.config import desk_config
from spikerate.data import Stream, assemble_stream
from spikerate.errors import ConfigError
from spikerate.events import TimestepFrame
from spikerate.net import CLASSIFICATION, forward_step
from spikerate.trainer import MetricsLog, Trainer, load_data, run_schedule


def small_config(**kw):
    base = {
        "arch.hidden": [6, 5],
        "data.train_per_class": 3,
        "data.test_per_class": 1,
        "data.length": 10,
        "data.gap": 3,
        "learn.horizon": 2,
        "passes": 2,
    }
    base.update(kw)
    return desk_config(**base)


@pytest.fixture(scope="module")
def data():
    return load_data(small_config())


def snapshot(state):
    return {name: w.omega.copy() for name, w in state.tensors()}


class TestTrainLayerPass:
    def test_zero_stream_unchanged(self, data):
        tr = Trainer(small_config(), *data)
        zero = Stream(np.zeros((20, 1058)), np.zeros(20, dtype=int), np.zeros(20, dtype=int))
        before = snapshot(tr.state)
        tr.train_layer_pass(1, zero, 1e-3, 1e-3)
        after = snapshot(tr.state)
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_frozen_layers(self, data):
        tr = Trainer(small_config(), *data)
        stream = assemble_stream(data[0], 3, None)
        before = snapshot(tr.state)
        tr.train_layer_pass(2, stream, 1e-3, 1e-3)
        after = snapshot(tr.state)
        assert np.array_equal(before["layer1"], after["layer1"])
        assert not np.array_equal(before["layer2"], after["layer2"])
        assert not np.array_equal(before[f"{CLASSIFICATION}:hidden2"], after[f"{CLASSIFICATION}:hidden2"])

    def test_short_stream(self, data):
        tr = Trainer(small_config(), *data)
        with pytest.raises(ConfigError):
            tr.train_layer_pass(1, Stream(np.zeros((5, 1058)), np.zeros(5, int), np.zeros(5, int)), 1e-3, 1e-3)

    def test_warmup_skips_counted(self, data):
        tr = Trainer(small_config(), *data)
        stream = assemble_stream(data[0], 3, None)
        tr.train_layer_pass(1, stream, 1e-3, 1e-3)
        K, horizon = tr.state.K, tr.config.learn.horizon
        assert tr.skipped["classification"] == K - 1
        assert tr.skipped["prediction"] == horizon + K - 1
        assert tr.skipped["autoencoder"] == K - 1


class TestHeadsStep:
    def test_gap_applies_only_d(self, data):
        tr = Trainer(small_config(dropout=0.0), *data)
        st = tr.state
        for w in st.heads[CLASSIFICATION]:
            w.data[...] = 0.01
        for t in range(st.K):
            forward_step(st, TimestepFrame("input", t, np.ones(1058)))
        before = snapshot(st)
        out = tr.train_heads_step(-1, 1e-4)
        q = out["class_q"]
        # with no label and positive Q, every class weight fed by active inputs shrinks
        after = snapshot(st)
        assert (q > 0).all()
        assert (after[f"{CLASSIFICATION}:input"] < before[f"{CLASSIFICATION}:input"]).all()

    def test_labelled_step_raises_true_class(self, data):
        tr = Trainer(small_config(dropout=0.0), *data)
        st = tr.state
        for t in range(st.K):
            forward_step(st, TimestepFrame("input", t, np.ones(1058)))
        tr.train_heads_step(1, 1e-4)
        w = st.heads[CLASSIFICATION][0].omega
        assert (w[1] > 0).all() and not w[0].any()


class TestSchedule:
    def test_init(self, data):
        tr = Trainer(small_config(**{"arch.init_high": 1e-5}), *data)
        for w in tr.state.weights:
            assert 0 <= w.omega.min() and w.omega.max() <= 1e-5
        for tensors in tr.state.heads.values():
            assert all(not w.omega.any() for w in tensors)

    def test_epsilon_halving(self, data):
        tr = Trainer(small_config(**{"learn.eps_layers": 1e-5, "learn.eps_heads": 2.5e-6}), *data)
        assert tr.epsilons(0) == (1e-5, 2.5e-6)
        assert tr.epsilons(1) == (5e-6, 1.25e-6)

    def test_run_and_metrics(self, data, tmp_path):
        model, metrics = run_schedule(small_config(), tmp_path, data)
        ts = [r[0] for r in metrics.rows]
        assert ts == sorted(ts)
        assert {"inference_nsse", "probe_class_error"} <= {r[3] for r in metrics.rows}
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["ckpt_p0_l1.bin", "ckpt_p0_l2.bin", "ckpt_p1_l1.bin", "ckpt_p1_l2.bin", "final.bin", "metrics.csv"]
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
        assert header == "timestep,pass,layer,metric,value"

    def test_deterministic(self, data, tmp_path):
        run_schedule(small_config(), tmp_path / "a", data)
        run_schedule(small_config(), tmp_path / "b", data)
        assert (tmp_path / "a" / "final.bin").read_bytes() == (tmp_path / "b" / "final.bin").read_bytes()

    def test_different_seed_differs(self, data, tmp_path):
        run_schedule(small_config(), tmp_path / "a", data)
        run_schedule(small_config(seed=1), tmp_path / "b", data)
        assert (tmp_path / "a" / "final.bin").read_bytes() != (tmp_path / "b" / "final.bin").read_bytes()

    def test_resume_bit_exact(self, data, tmp_path):
        run_schedule(small_config(), tmp_path / "full", data)
        tr = Trainer.resume(tmp_path / "full" / "ckpt_p0_l2.bin", *data, out_dir=tmp_path / "resumed")
        assert (tr.pass_index, tr.layer) == (1, 1)
        tr.run()
        assert (tmp_path / "full" / "final.bin").read_bytes() == (tmp_path / "resumed" / "final.bin").read_bytes()

    def test_abort_writes_checkpoint(self, data, tmp_path, monkeypatch):
        tr = Trainer(small_config(), *data, out_dir=tmp_path)

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(tr, "train_layer_pass", boom)
        with pytest.raises(RuntimeError):
            tr.run()
        state, meta = load_checkpoint(tmp_path / "aborted.bin")
        assert meta["pass_index"] == 0

    def test_no_training_data(self):
        with pytest.raises(ConfigError):
            Trainer(small_config(), [], [])


class TestMetricsLog:
    def test_monotone(self):
        log = MetricsLog()
        log.append(5, 0, 1, "x", 1.0)
        with pytest.raises(ValueError):
            log.append(4, 0, 1, "x", 1.0)

    def test_series(self):
        log = MetricsLog([(1, 0, 1, "a", 0.5), (2, 0, 1, "b", 0.1), (3, 0, 1, "a", 0.2)])
        assert log.series("a") == [(1, 0.5), (3, 0.2)]
