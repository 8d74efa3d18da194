"""
Layered network of rectified-linear spiking units with delayed weights.

Every connection between a pre-neuron ``i`` and a post-neuron ``j`` is a
piecewise-constant function of delay: ``omega[j, i, k-1]`` is its strength for
spikes that arrived ``k-1`` timesteps ago (``k = 1..K``), and it is zero for
longer delays.  The drive into ``j`` is therefore a finite sum over the last
``K`` frames of the layer below.

The same tensor read the other way round (post to pre, delays reversed) gives
the inference readout: the estimated activity of the layer below at the start
of a window of ``K`` future frames of the layer above.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BoundsError, ConfigError, GapError, NumericError
from .events import DEFAULT_TAU_US, HistoryWindow, TimestepFrame

ROLES = ("input", "hidden", "prediction-head", "classification-head")
PREDICTION = "prediction"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class LayerSpec:
    id: str
    size: int
    role: str

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"layer {self.id!r}: size must be >= 1, got {self.size}")
        if self.role not in ROLES:
            raise ConfigError(f"layer {self.id!r}: unknown role {self.role!r}")


class DelayedWeightTensor:
    """Weights ``omega[post, pre, k-1]`` for delays ``k = 1..K``.

    Storage is presynaptic-major, ``data[pre, k-1, post]``, so the rows touched
    by a sparse set of active pre-neurons are contiguous.  ``omega`` is a view
    in the canonical ``(post, pre, K)`` order.
    """

    __slots__ = ("pre", "post", "data")

    def __init__(self, pre: str, post: str, omega: np.ndarray):
        omega = np.asarray(omega, dtype=np.float64)
        if omega.ndim != 3 or min(omega.shape) < 1:
            raise BoundsError(f"omega must be a non-empty (post, pre, K) array, got {omega.shape}")
        if not np.all(np.isfinite(omega)):
            raise NumericError(f"non-finite weight in {pre}->{post}")
        self.pre = pre
        self.post = post
        self.data = np.array(omega.transpose(1, 2, 0), order="C")  # always a private copy

    @classmethod
    def zeros(cls, pre: str, post: str, n_post: int, n_pre: int, K: int) -> "DelayedWeightTensor":
        return cls(pre, post, np.zeros((n_post, n_pre, K)))

    @property
    def omega(self) -> np.ndarray:
        return self.data.transpose(2, 0, 1)

    @property
    def n_post(self) -> int:
        return self.data.shape[2]

    @property
    def n_pre(self) -> int:
        return self.data.shape[0]

    @property
    def K(self) -> int:
        return self.data.shape[1]

    @property
    def rows(self) -> np.ndarray:
        """``(n_pre*K, n_post)`` view; row ``i*K + k-1`` is pre ``i`` at delay ``k``."""
        return self.data.reshape(-1, self.n_post)

    def copy(self) -> "DelayedWeightTensor":
        return DelayedWeightTensor(self.pre, self.post, self.omega)

    def transposed(self) -> "DelayedWeightTensor":
        """Swap pre/post and reverse delay order."""
        return DelayedWeightTensor(self.post, self.pre, self.omega.transpose(1, 0, 2)[:, :, ::-1])

    def __repr__(self) -> str:
        return f"DelayedWeightTensor({self.pre!r}->{self.post!r}, shape={self.omega.shape})"


def drive_from_vector(weights: DelayedWeightTensor, h: np.ndarray) -> np.ndarray:
    """Drive for a flattened newest-first history ``h``; skips silent inputs."""
    active = np.flatnonzero(h)
    if active.size == h.size:
        return h @ weights.rows
    if active.size == 0:
        return np.zeros(weights.n_post)
    return h[active] @ weights.rows[active]


def relu(I):
    """Rectified linear activation: ``I`` if ``I > 0`` else 0.

    Accepts a scalar or an array.
    """
    arr = np.asarray(I, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("relu of non-finite input")
    out = np.where(arr > 0, arr, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def _check_window(weights: DelayedWeightTensor, window: HistoryWindow, n_expected: int) -> None:
    if window.capacity != weights.K:
        raise BoundsError(f"window holds K={window.capacity}, tensor has K={weights.K}")
    if window.size != n_expected:
        raise BoundsError(
            f"window of size {window.size} does not match tensor {weights!r}"
        )


def history_vector(window: HistoryWindow, *, pad: bool = False) -> np.ndarray:
    """Flattened newest-first history, aligned with :attr:`DelayedWeightTensor.rows`."""
    return window.as_array(newest_first=True, pad=pad).ravel()


def future_matrix(window: HistoryWindow) -> np.ndarray:
    """``(size, K)`` oldest-first array: column ``k-1`` is the frame at ``t+k-1``."""
    return window.as_array(newest_first=False)


def compute_drive(weights: DelayedWeightTensor, window: HistoryWindow) -> np.ndarray:
    """Drive into each post-neuron from the filled history ``window`` of the pre layer.

    ``Q[j] = sum_i sum_k omega[j, i, k-1] * h_i(t-k+1)`` with ``t`` the newest frame.
    """
    _check_window(weights, window, weights.n_pre)
    return drive_from_vector(weights, history_vector(window))


def compute_inference(weights: DelayedWeightTensor, future_window: HistoryWindow) -> np.ndarray:
    """Estimate of pre-layer activity at the start of ``future_window``.

    ``future_window`` holds post-layer frames ``t..t+K-1``;
    ``Q[i] = sum_j sum_k omega[j, i, k-1] * h_j(t+k-1)``.
    """
    _check_window(weights, future_window, weights.n_post)
    return inference_from_matrix(weights, future_matrix(future_window))


def inference_from_matrix(weights: DelayedWeightTensor, future: np.ndarray) -> np.ndarray:
    """Inference readout for a ``(n_post, K)`` oldest-first future matrix."""
    return weights.data.reshape(weights.n_pre, -1) @ future.T.ravel()


@dataclass
class DropoutMask:
    retained: np.ndarray
    rate: float

    @property
    def size(self) -> int:
        return self.retained.shape[0]


def sample_dropout_mask(size: int, rate: float, rng: np.random.Generator) -> DropoutMask:
    """Drop each of ``size`` neurons independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1], got {rate}")
    return DropoutMask(rng.random(size) >= rate, float(rate))


@dataclass
class NetworkState:
    """Weights, per-layer histories and the current timestep of a layered net.

    ``layers[0]`` is the input layer; ``layers[1:]`` are hidden layers in
    bottom-up order and ``weights[l-1]`` connects ``layers[l-1]`` to
    ``layers[l]``.  Each head holds one tensor per source layer (input and every
    hidden layer).
    """

    layers: list[LayerSpec]
    weights: list[DelayedWeightTensor]
    heads: dict[str, list[DelayedWeightTensor]]
    K: int
    tau_us: int = DEFAULT_TAU_US
    windows: dict[str, HistoryWindow] = field(default_factory=dict)
    t: int = -1

    def __post_init__(self):
        roles = [spec.role for spec in self.layers]
        if roles.count("input") != 1 or roles[0] != "input":
            raise ConfigError("network needs exactly one input layer, listed first")
        if any(r != "hidden" for r in roles[1:]):
            raise ConfigError("layers after the input must be hidden layers")
        if len(self.weights) != len(self.layers) - 1:
            raise ConfigError("need one weight tensor per consecutive layer pair")
        by_id = {spec.id: spec for spec in self.layers}
        for lo, hi, w in zip(self.layers, self.layers[1:], self.weights):
            if (w.pre, w.post) != (lo.id, hi.id) or w.data.shape != (lo.size, self.K, hi.size):
                raise BoundsError(f"tensor {w!r} does not connect {lo.id!r}->{hi.id!r} with K={self.K}")
        for name, tensors in self.heads.items():
            if [w.pre for w in tensors] != [spec.id for spec in self.layers]:
                raise ConfigError(f"head {name!r} must have one tensor per layer, in layer order")
            n_out = {w.n_post for w in tensors}
            if len(n_out) != 1:
                raise BoundsError(f"head {name!r} tensors disagree on output size")
            for w in tensors:
                if w.n_pre != by_id[w.pre].size or w.K != self.K:
                    raise BoundsError(f"head tensor {w!r} does not match layer {w.pre!r}")
        if not self.windows:
            self.reset()

    @property
    def input(self) -> LayerSpec:
        return self.layers[0]

    @property
    def hidden(self) -> list[LayerSpec]:
        return self.layers[1:]

    def head_size(self, name: str) -> int:
        return self.heads[name][0].n_post

    def reset(self) -> None:
        """Forget all activity; weights are kept."""
        self.windows = {spec.id: HistoryWindow(self.K, spec.size, spec.id) for spec in self.layers}
        self.t = -1

    def tensors(self) -> list[tuple[str, DelayedWeightTensor]]:
        """All tensors with stable names, in checkpoint order."""
        out = [(f"layer{l + 1}", w) for l, w in enumerate(self.weights)]
        for name in sorted(self.heads):
            out += [(f"{name}:{w.pre}", w) for w in self.heads[name]]
        return out

    def copy(self) -> "NetworkState":
        state = NetworkState(
            list(self.layers),
            [w.copy() for w in self.weights],
            {k: [w.copy() for w in v] for k, v in self.heads.items()},
            self.K,
            self.tau_us,
        )
        state.windows = {k: w.copy() for k, w in self.windows.items()}
        state.t = self.t
        return state


def build_network(
    input_size: int,
    hidden_sizes: Sequence[int],
    K: int,
    *,
    n_classes: int = 10,
    init_high: float = 1e-5,
    rng: np.random.Generator | None = None,
    tau_us: int = DEFAULT_TAU_US,
) -> NetworkState:
    """Inter-layer weights uniform in ``[0, init_high]``; head weights zero."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    rng = rng if rng is not None else np.random.default_rng()
    layers = [LayerSpec("input", input_size, "input")]
    layers += [LayerSpec(f"hidden{l + 1}", n, "hidden") for l, n in enumerate(hidden_sizes)]
    weights = [
        DelayedWeightTensor(lo.id, hi.id, rng.uniform(0.0, init_high, size=(hi.size, lo.size, K)))
        for lo, hi in zip(layers, layers[1:])
    ]
    heads = {
        PREDICTION: [DelayedWeightTensor.zeros(s.id, PREDICTION, input_size, s.size, K) for s in layers],
        CLASSIFICATION: [DelayedWeightTensor.zeros(s.id, CLASSIFICATION, n_classes, s.size, K) for s in layers],
    }
    return NetworkState(layers, weights, heads, K, tau_us)


def forward_step(
    state: NetworkState,
    input_frame: TimestepFrame,
    masks: dict[str, DropoutMask] | None = None,
    *,
    activity_scale: float = 1.0,
) -> tuple[NetworkState, list[TimestepFrame]]:
    """Advance every layer by one timestep.

    Hidden layers are updated bottom-up from the window of the layer below,
    which already contains the frame of this timestep.  Before a window has
    filled, missing older frames count as silence.  ``masks`` maps hidden layer
    ids to dropout masks; ``activity_scale`` multiplies hidden output (used to
    stand in for dropout at evaluation time).
    """
    if input_frame.t != state.t + 1:
        raise GapError(f"network at t={state.t} cannot accept input frame t={input_frame.t}")
    if input_frame.size != state.input.size:
        raise BoundsError(f"input frame has {input_frame.size} values, expected {state.input.size}")
    t = input_frame.t
    state.windows[state.input.id].push(
        input_frame if input_frame.layer_id == state.input.id
        else TimestepFrame(state.input.id, t, input_frame.values)
    )
    hidden_frames = []
    below = state.input
    for spec, w in zip(state.hidden, state.weights):
        drive = drive_from_vector(w, history_vector(state.windows[below.id], pad=True))
        h = relu(drive)
        if masks and spec.id in masks:
            mask = masks[spec.id]
            if mask.size != spec.size:
                raise BoundsError(f"mask for {spec.id!r} has size {mask.size}, layer has {spec.size}")
            h = h * mask.retained
        if activity_scale != 1.0:
            h = h * activity_scale
        frame = TimestepFrame(spec.id, t, h)
        state.windows[spec.id].push(frame)
        hidden_frames.append(frame)
        below = spec
    state.t = t
    return state, hidden_frames


def head_inputs(state: NetworkState) -> list[np.ndarray]:
    """Current newest-first history vector of every layer (zero-padded)."""
    return [history_vector(state.windows[spec.id], pad=True) for spec in state.layers]


def head_readout(state: NetworkState, name: str, inputs: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Drive into a head summed over all source layers."""
    inputs = head_inputs(state) if inputs is None else inputs
    tensors = state.heads[name]
    q = np.zeros(tensors[0].n_post)
    for w, v in zip(tensors, inputs):
        q += drive_from_vector(w, v)
    return q
