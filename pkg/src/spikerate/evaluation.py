"""
Readouts and metrics of a trained network.

At evaluation time dropout is switched off and hidden activity is multiplied by
the retention probability, so every downstream drive keeps the expectation it
had during training.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint
from .data import NO_LABEL, SensorMapping, Stream
from .errors import BoundsError, NumericError, UndefinedMetricError
from .events import TimestepFrame
from .learn import DelayBuffer, subtract_noise_baseline
from .net import (
    CLASSIFICATION,
    PREDICTION,
    DelayedWeightTensor,
    NetworkState,
    drive_from_vector,
    forward_step,
    future_matrix,
    head_inputs,
    inference_from_matrix,
)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, TimestepFrame) else np.asarray(x, dtype=np.float64)


def normalized_sse(estimate, truth) -> float:
    """Squared error divided by the sum of squares of ``truth``."""
    est, tru = _values(estimate), _values(truth)
    if est.shape != tru.shape:
        raise BoundsError(f"estimate {est.shape} and truth {tru.shape} differ in shape")
    denom = float(np.dot(tru, tru))
    if denom == 0.0:
        raise UndefinedMetricError("normalized SSE is undefined for an all-zero truth frame")
    diff = est - tru
    return float(np.dot(diff, diff)) / denom


def classify(q) -> int:
    """Index of the largest class drive; ties go to the lowest index."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise BoundsError(f"class drives must be a non-empty vector, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite class drive")
    return int(np.argmax(q))


def sparse_readout(tensors: Sequence[DelayedWeightTensor], inputs: Sequence[np.ndarray]) -> np.ndarray:
    q = np.zeros(tensors[0].n_post)
    for w, h in zip(tensors, inputs):
        q += drive_from_vector(w, h)
    return q


@dataclass
class EvalReport:
    steps: int
    labeled_steps: int
    recordings: int
    timestep_accuracy: float | None
    recording_accuracy: float | None
    inference_nsse: float | None
    prediction_nsse: float | None
    inference_frames: int
    prediction_frames: int
    skipped_inference: int
    skipped_prediction: int

    @property
    def timestep_error(self) -> float | None:
        return None if self.timestep_accuracy is None else 1.0 - self.timestep_accuracy

    @property
    def recording_error(self) -> float | None:
        return None if self.recording_accuracy is None else 1.0 - self.recording_accuracy

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_stream(
    state: NetworkState,
    stream: Stream,
    *,
    horizon: int,
    dropout_rate: float = 0.0,
    noise_rate: float = 0.0,
    trace: dict | None = None,
) -> EvalReport:
    """Run a frozen copy of ``state`` over ``stream`` and score its readouts.

    * per-timestep accuracy: argmax of the class drives on labelled timesteps
    * per-recording accuracy: argmax of class drives summed over a recording
    * inference: first hidden layer's estimate of the input at the start of its
      window, vs the true input frame
    * prediction: prediction head's estimate ``horizon`` steps ahead, vs the
      input frame that arrives then

    SSE readouts clamp negative drives at zero and subtract ``noise_rate``.
    Frames whose truth is all zero are skipped and counted.  Pass a dict as
    ``trace`` to collect per-timestep readouts.
    """
    st = state.copy()
    st.reset()
    scale = 1.0 - dropout_rate
    K = st.K
    w1 = st.weights[0]
    first_hidden = st.hidden[0].id
    buffer = DelayBuffer(horizon)
    n_classes = st.head_size(CLASSIFICATION)
    rec_sums: dict[int, np.ndarray] = {}
    rec_labels: dict[int, int] = {}
    correct = labeled = 0
    inf_err, pred_err = [], []
    skip_inf = skip_pred = 0
    if trace is not None:
        trace.update(inference=[], prediction=[], classification=[])
    for t in range(len(stream)):
        x = stream.frames[t]
        forward_step(st, TimestepFrame(st.input.id, t, x), activity_scale=scale)
        inputs = head_inputs(st)
        qc = sparse_readout(st.heads[CLASSIFICATION], inputs)
        label = int(stream.labels[t])
        if label != NO_LABEL:
            labeled += 1
            correct += classify(qc) == label
            rec = int(stream.recording[t])
            rec_sums[rec] = rec_sums.get(rec, np.zeros(n_classes)) + qc
            rec_labels[rec] = label
        qp = sparse_readout(st.heads[PREDICTION], inputs)
        buffer.push(t, qp)
        if t >= K - 1:
            window_start = st.windows[st.input.id].oldest.values
            q_inf = inference_from_matrix(w1, future_matrix(st.windows[first_hidden]))
            if window_start.any():
                inf_err.append(normalized_sse(np.maximum(q_inf, 0.0), window_start))
            else:
                skip_inf += 1
            if trace is not None:
                trace["inference"].append((t - K + 1, q_inf))
        past = buffer.ready(t)
        if past is not None and t - horizon >= K - 1:
            if x.any():
                pred_err.append(normalized_sse(subtract_noise_baseline(past, noise_rate), x))
            else:
                skip_pred += 1
            if trace is not None:
                trace["prediction"].append((t, past))
        if trace is not None:
            trace["classification"].append((t, qc))
    rec_correct = sum(classify(rec_sums[r]) == rec_labels[r] for r in rec_sums)
    return EvalReport(
        steps=len(stream),
        labeled_steps=labeled,
        recordings=len(rec_sums),
        timestep_accuracy=correct / labeled if labeled else None,
        recording_accuracy=rec_correct / len(rec_sums) if rec_sums else None,
        inference_nsse=float(np.mean(inf_err)) if inf_err else None,
        prediction_nsse=float(np.mean(pred_err)) if pred_err else None,
        inference_frames=len(inf_err),
        prediction_frames=len(pred_err),
        skipped_inference=skip_inf,
        skipped_prediction=skip_pred,
    )


def evaluate_checkpoints(paths, stream: Stream, **kwargs) -> list[tuple[int, float | None]]:
    """Classification error vs training time over a sequence of checkpoints."""
    series = []
    for path in paths:
        state, meta = load_checkpoint(path)
        report = evaluate_stream(state, stream, **kwargs)
        series.append((int(meta.get("global_t", 0)), report.timestep_error))
    return series


def write_report_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["metric", "value"])
        for key, value in report.as_dict().items():
            out.writerow([key, "" if value is None else value])


# --- receptive and predictive fields -----------------------------------------


@dataclass
class FieldMap:
    neuron: int
    grid: np.ndarray  # (polarity, y, x)

    def image(self) -> np.ndarray:
        """Polarity planes side by side, ``(y, polarity * x)``."""
        return np.hstack(list(self.grid))


def export_fields(
    weights: DelayedWeightTensor,
    normalize: bool = True,
    *,
    kind: str = "auto",
    mapping: SensorMapping = SensorMapping(),
) -> list[FieldMap]:
    """Delay-summed weights of each neuron laid out on the input grid.

    ``kind="receptive"`` maps every post-neuron over its pre (input) neurons;
    ``kind="predictive"`` maps every pre-neuron over the post (prediction)
    neurons.  ``"auto"`` picks receptive when the pre layer is input-sized
    and the post layer is not.  With ``normalize`` every nonzero map is scaled
    to a maximum absolute value of 1.
    """
    n_grid = mapping.n_inputs
    summed = weights.omega.sum(axis=2)  # (post, pre)
    if kind == "auto":
        kind = "receptive" if summed.shape[1] == n_grid and summed.shape[0] != n_grid else "predictive"
    if kind == "receptive":
        maps = summed
    elif kind == "predictive":
        maps = summed.T
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    if maps.shape[1] != n_grid:
        raise BoundsError(f"{kind} fields need {n_grid} grid neurons, tensor offers {maps.shape[1]}")
    shape = (mapping.polarity_channels, mapping.crop_size[1], mapping.crop_size[0])
    out = []
    for n, row in enumerate(maps):
        grid = row.reshape(shape).copy()
        peak = np.abs(grid).max()
        if normalize and peak > 0:
            grid /= peak
        out.append(FieldMap(n, grid))
    return out


def write_field(field: FieldMap, directory, prefix: str) -> tuple[Path, Path]:
    """Write a field as a CSV grid and an 8-bit PGM (mid-grey = 0)."""
    directory = Path(directory)
    img = field.image()
    csv_path = directory / f"{prefix}_{field.neuron:04d}.csv"
    np.savetxt(csv_path, img, delimiter=",", fmt="%.9g")
    peak = np.abs(img).max()
    scaled = img / peak if peak > 0 else img
    pix = np.clip(np.round(127.5 + 127.5 * scaled), 0, 255).astype(np.uint8)
    pgm_path = directory / f"{prefix}_{field.neuron:04d}.pgm"
    Image.fromarray(pix).save(pgm_path)
    return csv_path, pgm_path
