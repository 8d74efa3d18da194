"""
Brute-force checks that learned drives settle on empirical conditional rates.

For a context pattern ``H`` seen ``n`` times, with supervision mass ``n_o``
co-occurring, the rate the rules should learn is ``n_o / n``.  The benchmarks
here are tiny enough to count every context exactly and compare.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, UndefinedRateError
from .events import HistoryWindow, TimestepFrame
from .learn import d_update, subtract_noise_baseline, u_update
from .net import DelayedWeightTensor, compute_drive, drive_from_vector, history_vector

REPORT_COLUMNS = ("context", "oracle_rate", "learned_q", "gap")
TAIL_FRACTION = 0.2


def quantize(pattern, grid: float = 1.0) -> tuple[int, ...]:
    """Hashable key of a window pattern: values rounded to multiples of ``grid``."""
    if isinstance(pattern, HistoryWindow):
        pattern = pattern.as_array(newest_first=True)
    arr = np.asarray(pattern, dtype=np.float64)
    return tuple(int(v) for v in np.rint(arr.ravel() / grid))


@dataclass
class ContextCounter:
    key: tuple
    n: int = 0
    n_o: float = 0.0

    def add(self, strength: float) -> None:
        if strength < 0:
            raise ValueError(f"supervision strength must be >= 0, got {strength}")
        self.n += 1
        self.n_o += float(strength)

    @property
    def rate(self) -> float:
        if self.n == 0:
            raise UndefinedRateError(f"context {self.key} never occurred")
        return self.n_o / self.n


def count_contexts(trace: Iterable[tuple[object, float]], grid: float = 1.0) -> dict[tuple, ContextCounter]:
    counters: dict[tuple, ContextCounter] = {}
    for pattern, strength in trace:
        key = quantize(pattern, grid)
        counters.setdefault(key, ContextCounter(key)).add(strength)
    return counters


def empirical_conditional_rate(trace: Iterable[tuple[object, float]], pattern, grid: float = 1.0) -> float:
    """``n_o / n`` over the exact-match occurrences of ``pattern`` in ``trace``."""
    key = quantize(pattern, grid)
    counter = ContextCounter(key)
    for p, strength in trace:
        if quantize(p, grid) == key:
            counter.add(strength)
    return counter.rate


# --- benchmarks ----------------------------------------------------------------


@dataclass
class ReportRow:
    context: str
    oracle_rate: float
    learned_q: float
    tolerance: float | None = None

    @property
    def gap(self) -> float:
        return abs(self.learned_q - self.oracle_rate)

    @property
    def ok(self) -> bool:
        return self.tolerance is None or self.gap <= self.tolerance


@dataclass
class BenchmarkResult:
    final_q: float
    trajectory: np.ndarray
    oracle_rate: float
    noise_rate: float = 0.0
    converged_at: int | None = None

    @property
    def tail(self) -> np.ndarray:
        n = max(1, int(len(self.trajectory) * TAIL_FRACTION))
        return self.trajectory[-n:]

    @property
    def tail_mean(self) -> float:
        return float(self.tail.mean())

    @property
    def tail_std(self) -> float:
        return float(self.tail.std())

    @property
    def recovered_rate(self) -> float:
        """Final drive with the noise floor removed."""
        return float(subtract_noise_baseline(self.final_q, self.noise_rate))

    @property
    def gap(self) -> float:
        return abs(self.recovered_rate - self.oracle_rate)


def _one_hot_window(pattern: Sequence[float], layer_id: str = "context") -> HistoryWindow:
    win = HistoryWindow(1, len(pattern), layer_id)
    win.push(TimestepFrame(layer_id, 0, np.asarray(pattern, dtype=np.float64)))
    return win


def _train_step(w: DelayedWeightTensor, h: np.ndarray, o: float, eps: float) -> None:
    # u then d, both with the pre-update Q; h is the fixed window's history vector
    q = drive_from_vector(w, h)
    if o > 0:
        u_update(w, h, np.array([o]), eps)
    d_update(w, h, q, eps)


def detect_convergence(trajectory: np.ndarray, window: int = 1000, tol: float = 1e-4) -> int | None:
    """First step at which the mean over the last ``window`` steps moved by less
    than ``tol`` compared with the ``window`` steps before it; None if never."""
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.size < 2 * window:
        return None
    csum = np.concatenate(([0.0], np.cumsum(traj)))
    ends = np.arange(2 * window, traj.size + 1)
    recent = (csum[ends] - csum[ends - window]) / window
    before = (csum[ends - window] - csum[ends - 2 * window]) / window
    hit = np.flatnonzero(np.abs(recent - before) < tol)
    return int(ends[hit[0]]) if hit.size else None


def _check_rate(p: float, name: str = "p") -> None:
    if not 0.0 < p < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {p}")


def run_bernoulli_benchmark(
    p: float,
    steps: int,
    eps: float,
    seed: int,
    *,
    q0: float = 0.0,
    noise_rate: float = 0.0,
) -> BenchmarkResult:
    """One always-active context neuron, supervision Bernoulli(``p``).

    A single weight starting at ``q0`` is trained with the ``u`` and ``d`` rules.
    With ``noise_rate`` > 0, Poisson noise spikes are added to the supervision
    and :attr:`BenchmarkResult.recovered_rate` subtracts the floor again.  The
    oracle is ``n_o / n`` of the clean supervision stream.
    """
    _check_rate(p)
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    rng = np.random.default_rng(seed)
    labels = (rng.random(steps) < p).astype(np.float64)
    noise = rng.poisson(noise_rate, steps) if noise_rate > 0 else np.zeros(steps)
    supervision = labels + noise
    w = DelayedWeightTensor("context", "out", np.full((1, 1, 1), float(q0)))
    h = history_vector(_one_hot_window([1.0]))
    traj = np.empty(steps)
    for s in range(steps):
        _train_step(w, h, supervision[s], eps)
        traj[s] = w.omega[0, 0, 0]
    return BenchmarkResult(
        final_q=float(traj[-1]),
        trajectory=traj,
        oracle_rate=float(labels.sum() / steps),
        noise_rate=noise_rate,
        converged_at=detect_convergence(traj),
    )


@dataclass
class TwoContextReport:
    rows: list[ReportRow]
    trajectories: dict[str, np.ndarray] = field(default_factory=dict)

    def gaps(self) -> dict[str, float]:
        return {r.context: r.gap for r in self.rows}


def run_two_context_benchmark(
    p_a: float,
    p_b: float,
    steps: int,
    eps: float,
    seed: int,
    *,
    overlap: bool = False,
    tolerance: float | None = 0.05,
) -> TwoContextReport:
    """Contexts A and B alternate at random and share one output weight vector.

    Disjoint contexts activate different input neurons; with ``overlap`` both
    also activate a shared middle neuron, so their updates interfere.  Each
    learned ``Q`` is compared with its context's ``n_o / n``.
    """
    _check_rate(p_a, "p_a")
    _check_rate(p_b, "p_b")
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    patterns = {"A": [1.0, 1.0, 0.0], "B": [0.0, 1.0, 1.0]} if overlap else {"A": [1.0, 0.0], "B": [0.0, 1.0]}
    rates = {"A": p_a, "B": p_b}
    n_in = len(patterns["A"])
    rng = np.random.default_rng(seed)
    which = rng.integers(0, 2, steps)
    u = rng.random(steps)
    vectors = {c: history_vector(_one_hot_window(pat)) for c, pat in patterns.items()}
    w = DelayedWeightTensor("context", "out", np.zeros((1, n_in, 1)))
    counters = {c: ContextCounter(c) for c in patterns}
    traj = {c: np.empty(steps) for c in patterns}
    for s in range(steps):
        c = "AB"[which[s]]
        o = float(u[s] < rates[c])
        counters[c].add(o)
        _train_step(w, vectors[c], o, eps)
        weights = w.omega[0, :, 0]
        for name, vec in vectors.items():
            traj[name][s] = weights @ vec
    label = "overlap" if overlap else "disjoint"
    rows = [
        ReportRow(f"{label}:{c}", counters[c].rate, float(traj[c][-1]), tolerance)
        for c in patterns
    ]
    return TwoContextReport(rows, traj)


@dataclass
class DriftMeasurement:
    measured: float
    predicted: float

    @property
    def relative_error(self) -> float:
        return abs(self.measured - self.predicted) / abs(self.predicted)


def measure_drift(
    omega: np.ndarray, window: HistoryWindow, p: float, eps: float, rounds: int, seed: int
) -> DriftMeasurement:
    """Mean one-step change of ``Q`` from a fixed state under Bernoulli(``p``)
    supervision, against the expected drift ``eps * sum(h**2) * (p - Q)``.

    ``omega`` is ``(1, pre, K)``; every round restarts from it.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape[0] != 1:
        raise BoundsError("drift is measured for a single output neuron")
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    rng = np.random.default_rng(seed)
    base = DelayedWeightTensor(window.layer_id, "out", omega)
    q0 = float(compute_drive(base, window)[0])
    h = window.as_array(newest_first=True)
    predicted = eps * float(np.sum(h * h)) * (p - q0)
    hv = history_vector(window)
    total = 0.0
    for o in (rng.random(rounds) < p).astype(np.float64):
        w = base.copy()
        _train_step(w, hv, o, eps)
        total += float(compute_drive(w, window)[0]) - q0
    return DriftMeasurement(total / rounds, predicted)


# --- reporting -------------------------------------------------------------------


def verification_rows(seed: int = 0, *, steps: int = 50_000, eps: float = 1e-3, tolerance: float = 0.05) -> list[ReportRow]:
    """The standard oracle suite: Bernoulli rates, noise floor, two contexts."""
    rows = []
    for i, p in enumerate((0.1, 0.25, 0.5)):
        r = run_bernoulli_benchmark(p, steps, eps, seed + i)
        rows.append(ReportRow(f"bernoulli:p={p}", r.oracle_rate, r.final_q, tolerance))
    noisy = run_bernoulli_benchmark(0.25, steps, eps, seed + 3, noise_rate=0.3)
    rows.append(ReportRow("bernoulli-noise:p=0.25,m=0.3", noisy.oracle_rate, noisy.recovered_rate, tolerance))
    rows.extend(run_two_context_benchmark(0.8, 0.2, steps, eps, seed + 4).rows)
    rows.extend(run_two_context_benchmark(0.8, 0.2, steps, eps, seed + 5, overlap=True, tolerance=None).rows)
    return rows


def write_report_csv(path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(REPORT_COLUMNS)
        for r in rows:
            out.writerow([r.context, f"{r.oracle_rate:.6f}", f"{r.learned_q:.6f}", f"{r.gap:.6f}"])
