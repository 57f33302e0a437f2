import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitta.stream import (Batch, EmptyInputError, Window, batch_iter, class_sorted_stream, make_windows,
                          read_windows_bin, read_windows_csv, write_windows_bin, write_windows_csv)


def _pool(label, n, T=8):
    rng = np.random.default_rng(label)
    return [Window(rng.normal(size=(T, 3)), label, i, 50.0, ("pool", label, i)) for i in range(n)]


def test_window_count_matches_oracle():
    sig = np.zeros((1000, 3))
    ws = make_windows(sig, 128, 64)
    assert len(ws) == 14


def test_windows_start_at_stride_multiples():
    sig = np.arange(60, dtype=float)[:, None].repeat(3, axis=1)
    ws = make_windows(sig, 10, 7, label=2, tag_prefix="s")
    assert [w.samples[0, 0] for w in ws] == [7.0 * k for k in range(len(ws))]
    assert all(w.label == 2 for w in ws)
    assert ws[3].tag == ("s", 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 300), st.integers(4, 64), st.integers(1, 40))
def test_window_count_formula(n, T, s):
    if n < T:
        with pytest.raises(EmptyInputError):
            make_windows(np.zeros((n, 3)), T, s)
        return
    ws = make_windows(np.zeros((n, 3)), T, s)
    assert len(ws) == sum(1 for k in range(n) if k * s + T <= n)


def test_window_validation():
    with pytest.raises(ValueError):
        Window(np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        Window(np.zeros((8, 2)), 0)
    with pytest.raises(ValueError):
        Window(np.full((8, 3), np.nan), 0)


def test_batch_requires_matching_shapes():
    with pytest.raises(ValueError):
        Batch((Window(np.zeros((8, 3)), 0), Window(np.zeros((9, 3)), 0)))
    with pytest.raises(ValueError):
        Batch(())


def test_batch_iter_drops_trailing_windows():
    batches, dropped = batch_iter(_pool(0, 10), 4)
    assert len(batches) == 2 and dropped == 2
    assert batches[0].data.shape == (4, 8, 3)


def test_class_sorted_stream_phases_and_cycling():
    pools = {0: _pool(0, 5), 1: _pool(1, 40)}
    sched = class_sorted_stream(pools, phase_len=3, batch_size=4, class_order=[1, 0])
    assert len(sched) == 6
    assert sched.phase_boundaries == (3,)
    assert [sched.phase_of(s) for s in range(6)] == [0, 0, 0, 1, 1, 1]
    assert all(set(b.labels) == {1} for b in sched.batches[:3])
    assert all(set(b.labels) == {0} for b in sched.batches[3:])
    assert sched.cycled == {1: False, 0: True}
    # without replacement the pool is read in order and wraps around
    tags = [w.tag[2] for b in sched.batches[3:] for w in b.windows]
    assert tags == [i % 5 for i in range(12)]
    assert [w.step_index for w in sched.windows()] == list(range(24))


def test_class_sorted_stream_with_replacement_is_seeded():
    pools = {0: _pool(0, 7)}
    a = class_sorted_stream(pools, 4, 3, replacement=True, seed=1)
    b = class_sorted_stream(pools, 4, 3, replacement=True, seed=1)
    assert [w.tag for w in a.windows()] == [w.tag for w in b.windows()]
    assert a.sampling == "with-replacement"


def test_csv_round_trip_is_exact(tmp_path):
    ws = _pool(1, 3, T=6)
    write_windows_csv(ws, tmp_path / "w.csv")
    back = read_windows_csv(tmp_path / "w.csv")
    for a, b in zip(ws, back):
        np.testing.assert_array_equal(a.samples, b.samples)
        assert (a.label, a.step_index, a.nominal_rate_hz) == (b.label, b.step_index, b.nominal_rate_hz)


def test_binary_round_trip_is_exact(tmp_path):
    ws = _pool(2, 4, T=5)
    write_windows_bin(ws, tmp_path / "w.bin")
    back = read_windows_bin(tmp_path / "w.bin")
    assert (tmp_path / "w.bin").read_bytes()[:4] == b"PITW"
    for a, b in zip(ws, back):
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.label == b.label and a.step_index == b.step_index


def test_binary_rejects_foreign_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        read_windows_bin(tmp_path / "x.bin")
