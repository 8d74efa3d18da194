"""
Event-triggered weight updates.

Two local rules move the drive ``Q`` of an output neuron toward the rate at
which it is supervised, conditional on the history window ``H`` it sees:

* ``d`` runs every time a window occurs and lowers ``Q``:
  ``omega <- omega - eps * h * Q``
* ``u`` runs for every supervision spike ``o`` that co-occurs with the window
  and raises ``Q``: ``omega <- omega + eps * h * o``

Per occurrence the expected change of ``Q`` is ``eps * sum(h**2) * (p - Q)``
where ``p`` is the supervision rate given ``H``, so ``Q = p`` is the only fixed
point.  Within a timestep both rules use the ``Q`` computed before either
update; the training loop applies them together as ``eps * h * (o - Q)``.

All update functions modify tensors in place and return them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundsError, ConfigError, InsufficientHistoryError, NumericError
from .events import HistoryWindow, TimestepFrame
from .net import DelayedWeightTensor, drive_from_vector, future_matrix, history_vector, inference_from_matrix


@dataclass
class LearnConfig:
    eps_layers: float = 1e-5
    eps_heads: float = 2.5e-6
    halve_per_pass: bool = True
    noise_rate: float = 0.0
    horizon: int = 15

    def __post_init__(self):
        if not (self.eps_layers > 0 and self.eps_heads > 0):
            raise ConfigError("learning rates must be positive")
        if self.noise_rate < 0:
            raise ConfigError(f"noise rate must be >= 0, got {self.noise_rate}")
        if self.horizon < 1:
            raise ConfigError(f"prediction horizon must be >= 1, got {self.horizon}")


def _check_eps(eps: float) -> None:
    if not np.isfinite(eps) or eps <= 0:
        raise NumericError(f"learning rate must be finite and positive, got {eps}")


def _outer_update(rows: np.ndarray, h: np.ndarray, coef: np.ndarray, scale: float) -> None:
    # Rows with h == 0 and columns with coef == 0 receive exactly zero change, so skip them.
    active = np.flatnonzero(h)
    cols = np.flatnonzero(coef)
    if active.size == 0 or cols.size == 0:
        return
    if cols.size == coef.size:
        delta = np.outer(h[active], scale * coef)
        if active.size == h.size:
            rows += delta
        else:
            rows[active] += delta
    else:
        rows[np.ix_(active, cols)] += np.outer(h[active], scale * coef[cols])


def d_update(weights: DelayedWeightTensor, h: np.ndarray, q: np.ndarray, eps: float) -> DelayedWeightTensor:
    """``d`` on a flattened newest-first history vector ``h``."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (weights.n_post,) or h.shape != (weights.n_pre * weights.K,):
        raise BoundsError(f"d: Q{q.shape} / h{h.shape} do not fit {weights!r}")
    if not np.all(np.isfinite(q)):
        raise NumericError("d: non-finite Q")
    _outer_update(weights.rows, h, q, -eps)
    return weights


def u_update(weights: DelayedWeightTensor, h: np.ndarray, o: np.ndarray, eps: float) -> DelayedWeightTensor:
    """``u`` on a flattened newest-first history vector ``h``."""
    o = np.asarray(o, dtype=np.float64)
    if o.shape != (weights.n_post,) or h.shape != (weights.n_pre * weights.K,):
        raise BoundsError(f"u: o{o.shape} / h{h.shape} do not fit {weights!r}")
    if not np.all(np.isfinite(o)):
        raise NumericError("u: non-finite supervision")
    _outer_update(weights.rows, h, o, eps)
    return weights


def apply_d(weights: DelayedWeightTensor, window: HistoryWindow, Q, eps: float) -> DelayedWeightTensor:
    """``omega[j,i,k] -= eps * h_i(t-k+1) * Q[j]`` for a filled ``window``."""
    _check_eps(eps)
    if window.size != weights.n_pre or window.capacity != weights.K:
        raise BoundsError(f"window {window!r} does not fit {weights!r}")
    return d_update(weights, history_vector(window), Q, eps)


def apply_u(
    weights: DelayedWeightTensor, window: HistoryWindow, supervision: TimestepFrame, eps: float
) -> DelayedWeightTensor:
    """``omega[j,i,k] += eps * h_i(t-k+1) * o[j]`` for supervision strengths ``o``."""
    _check_eps(eps)
    if window.size != weights.n_pre or window.capacity != weights.K:
        raise BoundsError(f"window {window!r} does not fit {weights!r}")
    return u_update(weights, history_vector(window), supervision.values, eps)


def co_apply(
    tensors: Sequence[DelayedWeightTensor],
    inputs: Sequence[np.ndarray],
    target: np.ndarray | None,
    eps: float,
) -> np.ndarray:
    """Train an output layer fed by several source tensors on one timestep.

    Computes ``Q`` from all sources, then applies ``u`` for ``target`` (if
    any) and ``d`` as the single combined change ``eps * h * (target - Q)``.
    Returns the pre-update ``Q``.
    """
    _check_eps(eps)
    q = np.zeros(tensors[0].n_post)
    for w, h in zip(tensors, inputs):
        q += drive_from_vector(w, h)
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite drive")
    err = -q if target is None else np.asarray(target, dtype=np.float64) - q
    for w, h in zip(tensors, inputs):
        _outer_update(w.rows, h, err, eps)
    return q


def autoencoder_update(
    weights: DelayedWeightTensor, x: np.ndarray, future: np.ndarray, eps: float
) -> np.ndarray:
    """Self-supervised update of the pre layer's inference readout.

    ``future[j, k-1]`` is post-layer activity at ``t+k-1`` and ``x`` the
    pre-layer frame at ``t``.  ``u`` (target ``x``) and ``d`` are applied as
    the combined change ``eps * h_j(t+k-1) * (x_i - Q_i)``.  Returns the
    pre-update inference ``Q``.
    """
    _check_eps(eps)
    if future.shape != (weights.n_post, weights.K) or x.shape != (weights.n_pre,):
        raise BoundsError(f"autoencoder: x{x.shape} / future{future.shape} do not fit {weights!r}")
    q = inference_from_matrix(weights, future)
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite inference")
    _outer_update(weights.data.reshape(weights.n_pre, -1), x - q, future.T.ravel(), eps)
    return q


def autoencoder_step(
    weights: DelayedWeightTensor,
    input_frame_at_window_start: TimestepFrame,
    hidden_future_window: HistoryWindow,
    eps: float,
) -> DelayedWeightTensor:
    """One self-supervision event for the pre layer of ``weights``.

    ``hidden_future_window`` holds post-layer frames ``t..t+K-1`` and the input
    frame is the pre layer at ``t``.
    """
    if not hidden_future_window.filled:
        raise InsufficientHistoryError("autoencoder step needs a filled hidden window")
    if hidden_future_window.size != weights.n_post:
        raise BoundsError(f"hidden window {hidden_future_window!r} does not fit {weights!r}")
    if input_frame_at_window_start.t != hidden_future_window.oldest.t:
        raise BoundsError(
            f"input frame t={input_frame_at_window_start.t} is not at window start "
            f"t={hidden_future_window.oldest.t}"
        )
    autoencoder_update(weights, input_frame_at_window_start.values, future_matrix(hidden_future_window), eps)
    return weights


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def prediction_step(
    head_weights,
    hidden_window_ending_earlier,
    input_frame_now: TimestepFrame,
    eps: float,
):
    """Supervise prediction neurons with the current input frame.

    The window(s) must be the history that ended ``horizon`` steps before
    ``input_frame_now``.  Accepts one tensor/window pair or parallel sequences
    (one per source layer).
    """
    tensors = _as_list(head_weights)
    windows = _as_list(hidden_window_ending_earlier)
    if len(tensors) != len(windows):
        raise BoundsError("one window per head tensor required")
    for w, win in zip(tensors, windows):
        if not win.filled:
            raise InsufficientHistoryError(f"prediction source {win.layer_id!r} not filled")
        if win.size != w.n_pre or win.capacity != w.K:
            raise BoundsError(f"window {win!r} does not fit {w!r}")
    co_apply(tensors, [history_vector(win) for win in windows], input_frame_now.values, eps)
    return head_weights


def classification_step(head_weights, hidden_window, label_frame: TimestepFrame | None, eps: float):
    """Supervise classification neurons with ``label_frame`` (None or zeros in gaps)."""
    tensors = _as_list(head_weights)
    windows = _as_list(hidden_window)
    if len(tensors) != len(windows):
        raise BoundsError("one window per head tensor required")
    for w, win in zip(tensors, windows):
        if not win.filled:
            raise InsufficientHistoryError(f"classification source {win.layer_id!r} not filled")
        if win.size != w.n_pre or win.capacity != w.K:
            raise BoundsError(f"window {win!r} does not fit {w!r}")
    target = None if label_frame is None else label_frame.values
    co_apply(tensors, [history_vector(win) for win in windows], target, eps)
    return head_weights


class DelayBuffer:
    """Holds head inputs until the prediction target ``horizon`` steps later arrives."""

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        self.horizon = horizon
        self._items: deque = deque(maxlen=horizon + 1)
        self.skipped = 0

    def push(self, t: int, item) -> None:
        self._items.append((t, item))

    def ready(self, t: int):
        """Item recorded at ``t - horizon`` or None."""
        if self._items and self._items[0][0] == t - self.horizon:
            return self._items[0][1]
        return None

    def clear(self) -> None:
        self._items.clear()


def epsilon_schedule(pass_index: int, eps0: float) -> float:
    """Learning rate halved after every pass: ``eps0 * 2**-pass_index``."""
    if pass_index < 0:
        raise ConfigError(f"pass index must be >= 0, got {pass_index}")
    return eps0 * 2.0 ** (-pass_index)


def inject_supervision_noise(frame: TimestepFrame, m: float, rng: np.random.Generator) -> TimestepFrame:
    """Add independent Poisson(m) unit spikes to every supervised neuron."""
    if m < 0:
        raise ConfigError(f"noise rate must be >= 0, got {m}")
    if m == 0:
        return frame
    return TimestepFrame(frame.layer_id, frame.t, frame.values + rng.poisson(m, frame.size))


def subtract_noise_baseline(Q, m: float):
    """Remove a learnt noise floor ``m`` from a rate estimate, clamping at 0."""
    out = np.maximum(np.asarray(Q, dtype=np.float64) - m, 0.0)
    return float(out) if out.ndim == 0 else out
