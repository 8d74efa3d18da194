"""
Layerwise training schedule.

One pass trains every inter-layer tensor in turn, bottom-up, each for one sweep
of the training stream.  During the sweep for hidden layer ``l`` only the
``(l-1, l)`` tensor and the head tensors learn; the heads learn on every
timestep of every sweep.  After each pass all learning rates are halved.

Runs are reproducible from ``TrainConfig.seed``: network init, stream order,
dropout masks and supervision noise each draw from their own seeded stream,
and checkpoints store those streams so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, from_dict, to_dict
from .data import (
    NO_LABEL,
    Recording,
    SensorMapping,
    Stream,
    assemble_stream,
    load_dataset_dir,
    split_train_test,
    synth_recordings,
)
from .errors import ConfigError
from .evaluation import EvalReport, evaluate_stream, normalized_sse
from .events import TimestepFrame
from .learn import DelayBuffer, autoencoder_update, co_apply, epsilon_schedule, subtract_noise_baseline
from .net import (
    CLASSIFICATION,
    PREDICTION,
    NetworkState,
    build_network,
    forward_step,
    future_matrix,
    head_inputs,
    sample_dropout_mask,
)

log = logging.getLogger(__name__)

RNG_STREAMS = ("init", "order", "dropout", "noise")
METRIC_COLUMNS = ("timestep", "pass", "layer", "metric", "value")


class MetricsLog:
    """Append-only ``(timestep, pass, layer, metric, value)`` rows."""

    def __init__(self, rows=None):
        self.rows: list[tuple[int, int, int, str, float]] = []
        for row in rows or ():
            self.append(*row)

    def append(self, timestep: int, pass_index: int, layer: int, metric: str, value: float) -> None:
        if self.rows and timestep < self.rows[-1][0]:
            raise ValueError(f"metrics timestep {timestep} precedes {self.rows[-1][0]}")
        self.rows.append((int(timestep), int(pass_index), int(layer), str(metric), float(value)))

    def __len__(self) -> int:
        return len(self.rows)

    def series(self, metric: str) -> list[tuple[int, float]]:
        return [(r[0], r[4]) for r in self.rows if r[3] == metric]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(METRIC_COLUMNS)
            out.writerows(self.rows)


@dataclass
class PassMetrics:
    pass_index: int
    layer: int
    steps: int
    inference_nsse: float | None
    prediction_nsse: float | None
    class_error: float | None
    skipped: dict = field(default_factory=dict)


@dataclass
class Model:
    state: NetworkState
    config: TrainConfig

    def evaluate(self, stream: Stream, **kwargs) -> EvalReport:
        kwargs.setdefault("horizon", self.config.learn.horizon)
        kwargs.setdefault("dropout_rate", self.config.dropout)
        kwargs.setdefault("noise_rate", self.config.learn.noise_rate)
        return evaluate_stream(self.state, stream, **kwargs)


def sensor_mapping(config: TrainConfig) -> SensorMapping:
    return SensorMapping(crop_origin=tuple(config.data.crop_origin))


def load_data(config: TrainConfig) -> tuple[list[Recording], list[Recording]]:
    """Train and test recordings described by ``config.data``."""
    d = config.data
    mapping = sensor_mapping(config)
    if d.kind == "synthetic":
        by_label = synth_recordings(
            d.classes,
            d.train_per_class + d.test_per_class,
            d.length,
            d.noise_rate,
            d.data_seed,
            mapping,
            config.arch.tau_us,
            d.bar_length or None,
        )
    else:
        by_label = load_dataset_dir(d.path, mapping, config.arch.tau_us)
    bad = [label for label in by_label if not 0 <= label < config.arch.n_classes]
    if bad:
        raise ConfigError(f"labels {bad} outside 0..{config.arch.n_classes - 1}")
    return split_train_test(by_label, d.train_per_class, d.test_per_class)


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        train: list[Recording],
        test: list[Recording] | None = None,
        out_dir=None,
    ):
        if not train:
            raise ConfigError("no training recordings")
        self.config = config
        self.train = train
        self.test = test or []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        seeds = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
        self.rng = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, seeds)}
        n_inputs = train[0].frames.shape[1]
        a = config.arch
        self.state = build_network(
            n_inputs,
            a.hidden,
            a.K,
            n_classes=a.n_classes,
            init_high=a.init_high,
            rng=self.rng["init"],
            tau_us=a.tau_us,
        )
        self.delay = DelayBuffer(config.learn.horizon)
        self.skipped: Counter = Counter()
        self.metrics = MetricsLog()
        self.pass_index = 0
        self.layer = 1
        self.global_t = 0
        self.layer_passes = 0
        self._label_eye = np.eye(a.n_classes) * config.label_strength

    # --- learning rates ---------------------------------------------------

    def epsilons(self, pass_index: int) -> tuple[float, float]:
        lc = self.config.learn
        if not lc.halve_per_pass:
            return lc.eps_layers, lc.eps_heads
        return epsilon_schedule(pass_index, lc.eps_layers), epsilon_schedule(pass_index, lc.eps_heads)

    # --- per-timestep pieces -------------------------------------------------

    def _masks(self):
        rate = self.config.dropout
        if rate <= 0:
            return None
        return {spec.id: sample_dropout_mask(spec.size, rate, self.rng["dropout"]) for spec in self.state.hidden}

    def _supervision(self, values: np.ndarray | None, size: int) -> np.ndarray | None:
        m = self.config.learn.noise_rate
        if m <= 0:
            return values
        noise = self.rng["noise"].poisson(m, size).astype(np.float64)
        return noise if values is None else values + noise

    def train_heads_step(self, label: int, eps_heads: float) -> dict:
        """Train both heads on the timestep the network has just stepped to."""
        st = self.state
        t = st.t
        out = {}
        inputs = head_inputs(st)
        if t >= st.K - 1:
            target = self._label_eye[label] if label != NO_LABEL else None
            target = self._supervision(target, st.head_size(CLASSIFICATION))
            out["class_q"] = co_apply(st.heads[CLASSIFICATION], inputs, target, eps_heads)
        else:
            self.skipped["classification"] += 1
        self.delay.push(t, inputs)
        past = self.delay.ready(t)
        x = st.windows[st.input.id].frames[-1].values
        if past is not None and t - self.delay.horizon >= st.K - 1:
            target = self._supervision(x, x.size)
            out["pred_q"] = co_apply(st.heads[PREDICTION], past, target, eps_heads)
            out["pred_truth"] = x
        else:
            self.skipped["prediction"] += 1
        return out

    def train_layer_pass(self, layer: int, stream: Stream, eps: float, eps_heads: float) -> PassMetrics:
        """One sweep of ``stream`` training the tensor below hidden ``layer`` (1-based)."""
        st = self.state
        if len(stream) < st.K + 1:
            raise ConfigError(f"stream of {len(stream)} frames is shorter than K+1={st.K + 1}")
        if not 1 <= layer <= len(st.hidden):
            raise ConfigError(f"layer {layer} outside 1..{len(st.hidden)}")
        st.reset()
        self.delay.clear()
        w = st.weights[layer - 1]
        below = st.layers[layer - 1].id
        hidden = st.hidden[layer - 1].id
        inf_err, pred_err = [], []
        class_wrong = class_total = 0
        for s in range(len(stream)):
            forward_step(st, TimestepFrame(st.input.id, s, stream.frames[s]), self._masks())
            hw = st.windows[hidden]
            if hw.filled:
                x = st.windows[below].oldest.values
                q = autoencoder_update(w, x, future_matrix(hw), eps)
                if x.any():
                    inf_err.append(normalized_sse(np.maximum(q, 0.0), x))
            else:
                self.skipped["autoencoder"] += 1
            label = int(stream.labels[s])
            out = self.train_heads_step(label, eps_heads)
            if "class_q" in out and label != NO_LABEL:
                class_total += 1
                class_wrong += int(np.argmax(out["class_q"])) != label
            if "pred_q" in out and out["pred_truth"].any():
                estimate = subtract_noise_baseline(out["pred_q"], self.config.learn.noise_rate)
                pred_err.append(normalized_sse(estimate, out["pred_truth"]))
            self.global_t += 1
        return PassMetrics(
            self.pass_index,
            layer,
            len(stream),
            float(np.mean(inf_err)) if inf_err else None,
            float(np.mean(pred_err)) if pred_err else None,
            class_wrong / class_total if class_total else None,
            dict(self.skipped),
        )

    # --- schedule -------------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.pass_index >= self.config.passes

    def model(self) -> Model:
        return Model(self.state, self.config)

    def probe(self) -> EvalReport | None:
        if not self.test:
            return None
        stream = assemble_stream(self.test, self.config.data.gap, None)
        return self.model().evaluate(stream)

    def _log_pass(self, pm: PassMetrics, report: EvalReport | None) -> None:
        t, p, l = self.global_t, pm.pass_index, pm.layer
        for name, value in (
            ("inference_nsse", pm.inference_nsse),
            ("prediction_nsse", pm.prediction_nsse),
            ("train_class_error", pm.class_error),
        ):
            if value is not None:
                self.metrics.append(t, p, l, name, value)
        if report is not None:
            for name, value in (
                ("probe_class_error", report.timestep_error),
                ("probe_recording_error", report.recording_error),
                ("probe_inference_nsse", report.inference_nsse),
                ("probe_prediction_nsse", report.prediction_nsse),
            ):
                if value is not None:
                    self.metrics.append(t, p, l, name, value)

    def step(self) -> PassMetrics:
        """Train the next layer pass of the schedule."""
        eps, eps_heads = self.epsilons(self.pass_index)
        stream = assemble_stream(self.train, self.config.data.gap, self.rng["order"])
        pm = self.train_layer_pass(self.layer, stream, eps, eps_heads)
        report = self.probe() if self.config.probe else None
        self._log_pass(pm, report)
        log.info(
            "pass %d layer %d: t=%d inference %.4g prediction %.4g probe error %s",
            pm.pass_index,
            pm.layer,
            self.global_t,
            pm.inference_nsse if pm.inference_nsse is not None else float("nan"),
            pm.prediction_nsse if pm.prediction_nsse is not None else float("nan"),
            None if report is None else f"{report.timestep_error:.4f}",
        )
        self.layer_passes += 1
        self.layer += 1
        if self.layer > len(self.state.hidden):
            self.layer = 1
            self.pass_index += 1
        return pm

    def run(self) -> Model:
        every = self.config.checkpoint_every
        try:
            while not self.finished:
                done = (self.pass_index, self.layer)
                self.step()
                if self.out_dir is not None and every and self.layer_passes % every == 0:
                    self.save(self.out_dir / f"ckpt_p{done[0]}_l{done[1]}.bin")
        except Exception:
            if self.out_dir is not None:
                self.save(self.out_dir / "aborted.bin")
            raise
        if self.out_dir is not None:
            self.save(self.out_dir / "final.bin")
        return self.model()

    # --- checkpoints -----------------------------------------------------------

    def meta(self) -> dict:
        eps, eps_heads = self.epsilons(min(self.pass_index, self.config.passes - 1))
        return {
            "pass_index": self.pass_index,
            "layer": self.layer,
            "global_t": self.global_t,
            "layer_passes": self.layer_passes,
            "eps_layers": eps,
            "eps_heads": eps_heads,
            "rng": {name: g.bit_generator.state for name, g in self.rng.items()},
            "skipped": dict(sorted(self.skipped.items())),
            "metrics": [list(r) for r in self.metrics.rows],
            "config": to_dict(self.config),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.state, self.meta())
        if self.out_dir is not None:
            self.metrics.write_csv(self.out_dir / "metrics.csv")
        return path

    @classmethod
    def resume(cls, path, train=None, test=None, out_dir=None) -> "Trainer":
        """Continue a run from a checkpoint; data is reloaded from its config if not given."""
        state, meta = load_checkpoint(path)
        config = from_dict(TrainConfig, meta["config"])
        if train is None:
            train, test = load_data(config)
        trainer = cls(config, train, test, out_dir)
        trainer.state = state
        for name, g in trainer.rng.items():
            g.bit_generator.state = meta["rng"][name]
        trainer.pass_index = meta["pass_index"]
        trainer.layer = meta["layer"]
        trainer.global_t = meta["global_t"]
        trainer.layer_passes = meta["layer_passes"]
        trainer.skipped = Counter(meta["skipped"])
        trainer.metrics = MetricsLog(tuple(r) for r in meta["metrics"])
        return trainer


def run_schedule(config: TrainConfig, out_dir=None, data=None) -> tuple[Model, MetricsLog]:
    """Train per ``config`` from scratch; returns the model and its metrics log."""
    train, test = data if data is not None else load_data(config)
    trainer = Trainer(config, train, test, out_dir)
    model = trainer.run()
    return model, trainer.metrics
