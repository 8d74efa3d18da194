import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikerate.data import (
    EVENT_DTYPE,
    NO_LABEL,
    Recording,
    RecordingMeta,
    SensorMapping,
    assemble_stream,
    bin_recording,
    load_dataset_dir,
    map_to_input,
    parse_event_file,
    read_events,
    read_manifest,
    split_train_test,
    synth_events,
    synth_moving_pattern,
    synth_recordings,
    write_events,
    write_manifest,
)
from spikerate.errors import ConfigError, OrderingError, ParseError
from spikerate.events import Event


def rec(length, label, n_in=4, fill=1.0):
    return Recording(np.full((length, n_in), fill), RecordingMeta(label, length, f"r{label}"))


class TestParse:
    def test_csv_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("x,y,t_us,polarity\n52,52,1000,1\n")
        (ev,) = parse_event_file(p, "csv")
        assert (ev.x, ev.y, ev.timestamp, ev.polarity) == (52, 52, 1000, 1)

    def test_csv_without_header(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("52,52,1000,0\n")
        assert parse_event_file(p)[0].polarity == 0

    @pytest.mark.parametrize("fmt, content", [("csv", ""), ("bin", None)])
    def test_empty(self, tmp_path, fmt, content):
        p = tmp_path / f"e.{fmt}"
        if content is None:
            write_events(p, np.zeros(0, EVENT_DTYPE))
        else:
            p.write_text(content)
        assert parse_event_file(p) == []

    def test_malformed_names_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("x,y,t_us,polarity\n52,52,1000,1\n52,52,abc,1\n")
        with pytest.raises(ParseError, match="line 3"):
            parse_event_file(p)

    def test_decreasing_timestamps(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("1,1,100,1\n1,1,50,1\n")
        with pytest.raises(OrderingError):
            parse_event_file(p)

    def test_binary_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"garbage-garbage-garbage")
        with pytest.raises(ParseError):
            read_events(p)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigError):
            read_events(tmp_path / "x.aedat")

    @given(
        st.lists(
            st.tuples(st.integers(0, 127), st.integers(0, 127), st.integers(0, 2**40), st.integers(0, 1)),
            max_size=40,
        )
    )
    def test_binary_round_trip(self, tmp_path_factory, raw):
        raw = sorted(raw, key=lambda r: r[2])
        events = [Event((x, y, p), t) for x, y, t, p in raw]
        d = tmp_path_factory.mktemp("rt")
        write_events(d / "e.bin", events)
        assert parse_event_file(d / "e.bin") == events
        write_events(d / "e.csv", events)
        assert parse_event_file(d / "e.csv") == events

    def test_csv_bin_csv_identical(self, tmp_path, rng):
        arr = np.zeros(50, EVENT_DTYPE)
        arr["x"] = rng.integers(0, 128, 50)
        arr["y"] = rng.integers(0, 128, 50)
        arr["t_us"] = np.sort(rng.integers(0, 10**6, 50))
        arr["polarity"] = rng.integers(0, 2, 50)
        write_events(tmp_path / "a.csv", arr)
        write_events(tmp_path / "b.bin", read_events(tmp_path / "a.csv"))
        write_events(tmp_path / "c.csv", read_events(tmp_path / "b.bin"))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


class TestMapping:
    def test_on_at_origin(self):
        (ev,), dropped = map_to_input([Event((52, 52, 1), 0)], SensorMapping())
        assert ev.source == 0 and dropped == 0

    def test_off_at_origin(self):
        (ev,), _ = map_to_input([Event((52, 52, 0), 0)], SensorMapping())
        assert ev.source == 529

    def test_outside_dropped(self):
        out, dropped = map_to_input([Event((0, 0, 1), 0), Event((53, 52, 1), 5)], SensorMapping())
        assert dropped == 1 and [e.source for e in out] == [1]

    def test_n_inputs(self):
        assert SensorMapping().n_inputs == 1058

    def test_crop_must_fit(self):
        with pytest.raises(ConfigError):
            SensorMapping(crop_origin=(120, 0))

    @given(st.integers(0, 127), st.integers(0, 127), st.integers(0, 1),
           st.integers(0, 105), st.integers(0, 105))
    def test_index_in_range(self, x, y, pol, x0, y0):
        out, _ = map_to_input([Event((x, y, pol), 0)], SensorMapping(crop_origin=(x0, y0)))
        assert all(0 <= e.source < 1058 for e in out)

    def test_vectorized_matches_scalar(self, rng):
        m = SensorMapping(crop_origin=(40, 60))
        arr = np.zeros(300, EVENT_DTYPE)
        arr["x"] = rng.integers(30, 70, 300)
        arr["y"] = rng.integers(50, 90, 300)
        arr["polarity"] = rng.integers(0, 2, 300)
        idx, _ = m.index_arrays(arr)
        scalar = [m.index(int(e["x"]), int(e["y"]), int(e["polarity"])) for e in arr]
        assert idx.tolist() == [i for i in scalar if i is not None]


class TestStream:
    def test_two_recordings_with_gap(self):
        s = assemble_stream([rec(77, 0), rec(77, 1)], 15, np.random.default_rng(0))
        assert len(s) == 169

    def test_single_recording_no_gap(self):
        r = rec(5, 3)
        s = assemble_stream([r], 0, np.random.default_rng(0))
        np.testing.assert_array_equal(s.frames, r.frames)
        assert (s.labels == 3).all()

    def test_same_seed_same_order(self):
        recs = [rec(3, i) for i in range(6)]
        a = assemble_stream(recs, 2, np.random.default_rng(9))
        b = assemble_stream(recs, 2, np.random.default_rng(9))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_empty(self):
        with pytest.raises(ConfigError):
            assemble_stream([], 15, None)

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=6), st.integers(0, 4), st.integers(0, 100))
    def test_labels_none_exactly_on_gaps(self, lengths, gap, seed):
        recs = [rec(n, i % 3) for i, n in enumerate(lengths)]
        s = assemble_stream(recs, gap, np.random.default_rng(seed))
        assert len(s) == sum(lengths) + gap * (len(lengths) - 1)
        gap_steps = s.labels == NO_LABEL
        assert gap_steps.sum() == gap * (len(lengths) - 1)
        assert not s.frames[gap_steps].any()
        assert s.frames[~gap_steps].all()


class TestSplit:
    def test_default_split_is_900_100(self):
        by = {d: list(range(1000)) for d in range(10)}
        train, test = split_train_test(by)
        assert len(train) == 9000 and len(test) == 1000
        assert train[:900] == list(range(900)) and test[:100] == list(range(900, 1000))

    def test_subsampled(self):
        by = {d: list(range(120)) for d in range(10)}
        train, test = split_train_test(by, 100, 20)
        assert len(train) == 1000 and len(test) == 200

    def test_too_few(self):
        with pytest.raises(ConfigError):
            split_train_test({0: list(range(50))}, 900, 100)


class TestSynthetic:
    def test_on_edge_advances_one_column(self):
        frames, label = synth_moving_pattern("bar_right", 12, 0.0, np.random.default_rng(4))
        on = frames[:, :529].reshape(-1, 23, 23)
        cols = [set(np.nonzero(f)[1]) for f in on]
        for a, b in zip(cols, cols[1:]):
            assert b == {(c + 1) % 23 for c in a}
        assert label == 0

    def test_length_one(self):
        frames, _ = synth_moving_pattern("corner_up", 1, 0.0, np.random.default_rng(0))
        assert frames.shape == (1, 1058)

    def test_unknown_class(self):
        with pytest.raises(ConfigError):
            synth_moving_pattern("circle_left", 5, 0.0, np.random.default_rng(0))

    def test_background_count(self):
        # pattern draws precede noise draws, so the noise-free run has the same pattern events
        length = 10  # 10 * 1058 = 10580 neuron-steps
        with_noise, _ = synth_events("bar_down", length, 0.01, np.random.default_rng(21))
        clean, _ = synth_events("bar_down", length, 0.0, np.random.default_rng(21))
        background = with_noise.size - clean.size
        assert 70 <= background <= 130

    def test_deterministic(self):
        a, _ = synth_events("corner_left", 20, 0.02, np.random.default_rng(3))
        b, _ = synth_events("corner_left", 20, 0.02, np.random.default_rng(3))
        assert a.tobytes() == b.tobytes()

    def test_events_sorted_and_in_crop(self):
        ev, _ = synth_events("bar_up", 30, 0.05, np.random.default_rng(8))
        assert (np.diff(ev["t_us"].astype(np.int64)) >= 0).all()
        frames = bin_recording(ev, SensorMapping(), t0_us=0)
        assert frames.sum() == ev.size

    def test_full_width_bar(self):
        frames, _ = synth_moving_pattern("bar_down", 4, 0.0, np.random.default_rng(1), bar_length=23)
        on = frames[:, :529].reshape(-1, 23, 23)
        for f in on:
            rows = np.nonzero(f.any(axis=1))[0]
            assert len(rows) == 1 and f[rows[0]].all()

    def test_recordings_by_label(self):
        by = synth_recordings(["bar_right", "bar_down"], 3, 5, 0.0, seed=0)
        assert sorted(by) == [0, 1]
        assert all(len(v) == 3 and all(r.label == k for r in v) for k, v in by.items())


class TestDatasetDir:
    def test_manifest_round_trip(self, tmp_path):
        write_manifest(tmp_path / "labels.csv", [("a", 1), ("b", 0)])
        assert read_manifest(tmp_path / "labels.csv") == [("a", 1), ("b", 0)]

    def test_manifest_bad_label(self, tmp_path):
        (tmp_path / "labels.csv").write_text("a,one\n")
        with pytest.raises(ParseError, match="line 1"):
            read_manifest(tmp_path / "labels.csv")

    def test_load(self, tmp_path):
        m = SensorMapping()
        for n, label in (("r0", 0), ("r1", 1)):
            ev, _ = synth_events(["bar_right", "bar_down"][label], 6, 0.0, np.random.default_rng(label))
            write_events(tmp_path / f"{n}.bin", ev)
        write_manifest(tmp_path / "labels.csv", [("r0", 0), ("r1", 1)])
        by = load_dataset_dir(tmp_path, m)
        assert sorted(by) == [0, 1]
        assert by[0][0].frames.shape[1] == 1058
