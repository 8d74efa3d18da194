import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikerate.errors import ConfigError, UndefinedRateError
from spikerate.events import HistoryWindow, TimestepFrame
from spikerate.oracle import (
    ContextCounter,
    ReportRow,
    count_contexts,
    detect_convergence,
    empirical_conditional_rate,
    measure_drift,
    quantize,
    run_bernoulli_benchmark,
    run_two_context_benchmark,
    verification_rows,
    write_report_csv,
)


def stationary_std(p, eps):
    # per-step recursion Q <- Q + eps (o - Q) with o ~ Bernoulli(p)
    return np.sqrt(eps * p * (1 - p) / (2 - eps))


class TestCounting:
    def test_half(self):
        A, B = (1, 0), (0, 1)
        trace = [(A, 1), (B, 1), (A, 0), (A, 1), (B, 0), (A, 0)]
        assert empirical_conditional_rate(trace, A) == 0.5

    def test_never_co_occurs(self):
        assert empirical_conditional_rate([((1,), 0), ((1,), 0)], (1,)) == 0.0

    def test_absent(self):
        with pytest.raises(UndefinedRateError):
            empirical_conditional_rate([((1,), 1)], (0,))

    def test_counter(self):
        c = ContextCounter((1,))
        with pytest.raises(UndefinedRateError):
            c.rate
        c.add(1.0)
        c.add(0.5)
        assert (c.n, c.n_o, c.rate) == (2, 1.5, 0.75)
        with pytest.raises(ValueError):
            c.add(-1)

    def test_quantize_window(self):
        w = HistoryWindow(2, 2, "L")
        w.push(TimestepFrame("L", 0, [1.0, 0.0]))
        w.push(TimestepFrame("L", 1, [0.0, 2.0]))
        assert quantize(w) == (0, 1, 2, 0)
        assert quantize([0.24, 0.26], grid=0.5) == (0, 1)

    def test_count_contexts(self):
        counts = count_contexts([((1,), 1), ((1,), 0), ((2,), 1)])
        assert counts[(1,)].rate == 0.5 and counts[(2,)].rate == 1.0


class TestBernoulli:
    @pytest.mark.parametrize("p", [0.1, 0.25, 0.5])
    def test_converges_to_oracle(self, p):
        r = run_bernoulli_benchmark(p, 50_000, 1e-3, seed=7)
        # oracle counted independently from the same seeded supervision stream
        labels = np.random.default_rng(7).random(50_000) < p
        assert r.oracle_rate == pytest.approx(labels.mean(), abs=1e-15)
        assert abs(r.final_q - r.oracle_rate) <= 0.05

    def test_start_at_rate_short_band(self):
        eps = 1e-3
        for seed in range(10):
            r = run_bernoulli_benchmark(0.5, 40, eps, seed, q0=0.5)
            assert np.abs(r.trajectory - 0.5).max() <= 10 * eps

    def test_start_at_rate_long_band(self):
        eps = 1e-3
        r = run_bernoulli_benchmark(0.5, 50_000, eps, 3, q0=0.5)
        assert np.abs(r.trajectory - 0.5).max() <= 5 * stationary_std(0.5, eps)

    def test_smaller_eps_smaller_fluctuation(self):
        big = run_bernoulli_benchmark(0.25, 50_000, 1e-3, 0)
        small = run_bernoulli_benchmark(0.25, 50_000, 5e-4, 0)
        assert small.tail_std < big.tail_std

    @pytest.mark.parametrize("p", [0.1, 0.5])
    def test_tail_mean_within_three_std(self, p):
        r = run_bernoulli_benchmark(p, 50_000, 1e-3, 11)
        assert abs(r.tail_mean - r.oracle_rate) <= 3 * r.tail_std

    @settings(max_examples=8)
    @given(st.floats(0.0, 2.0), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_global_attraction(self, q0, p, seed):
        eps = 5e-3
        r = run_bernoulli_benchmark(p, 5000, eps, seed, q0=q0)
        assert abs(r.tail_mean - r.oracle_rate) <= 4 * stationary_std(p, eps)

    def test_noise_floor(self):
        r = run_bernoulli_benchmark(0.25, 50_000, 1e-3, 5, noise_rate=0.3)
        assert r.final_q == pytest.approx(0.25 + 0.3, abs=0.06)
        assert r.gap <= 0.05

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
    def test_rate_out_of_range(self, p):
        with pytest.raises(ConfigError):
            run_bernoulli_benchmark(p, 10, 1e-3, 0)


class TestTwoContext:
    def test_disjoint(self):
        rows = run_two_context_benchmark(0.8, 0.2, 50_000, 1e-3, 0).rows
        assert [r.context for r in rows] == ["disjoint:A", "disjoint:B"]
        assert all(r.gap <= 0.05 for r in rows)

    def test_equal_rates(self):
        a, b = run_two_context_benchmark(0.4, 0.4, 50_000, 1e-3, 1).rows
        assert abs(a.learned_q - b.learned_q) <= 0.05

    def test_overlap_reports_gaps(self):
        report = run_two_context_benchmark(0.8, 0.2, 20_000, 1e-3, 2, overlap=True, tolerance=None)
        assert set(report.gaps()) == {"overlap:A", "overlap:B"}
        assert all(r.ok for r in report.rows)


class TestDrift:
    def test_matches_expected_drift(self):
        r = np.random.default_rng(4)
        w = HistoryWindow(2, 3, "L")
        for t in range(2):
            w.push(TimestepFrame("L", t, r.integers(0, 3, 3).astype(float)))
        omega = r.uniform(0, 0.05, size=(1, 3, 2))
        d = measure_drift(omega, w, p=0.6, eps=1e-3, rounds=10_000, seed=5)
        assert d.relative_error <= 0.05


class TestConvergence:
    def test_constant(self):
        assert detect_convergence(np.full(3000, 0.3)) == 2000

    def test_ramp_never(self):
        assert detect_convergence(np.linspace(0, 10, 5000)) is None

    def test_short(self):
        assert detect_convergence(np.zeros(100)) is None


class TestReport:
    def test_csv(self, tmp_path):
        write_report_csv(tmp_path / "r.csv", [ReportRow("bernoulli:p=0.25", 0.25, 0.26, 0.05)])
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "context,oracle_rate,learned_q,gap"
        assert lines[1] == "bernoulli:p=0.25,0.250000,0.260000,0.010000"

    def test_suite_passes(self):
        rows = verification_rows(0, steps=50_000)
        assert all(r.ok for r in rows)
        assert len(rows) == 8
