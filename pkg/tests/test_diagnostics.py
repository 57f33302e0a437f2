import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import silhouette_score

from conftest import perturbed_model
from pitta.diagnostics import (TRACE_COLUMNS, ProvenanceOverlapError, RetentionMonitor, RunTrace,
                               band_deviation, check_disjoint, export_run, heldout_eval, ribbon_export,
                               scissor_correlation, silhouette, violation_rate)
from pitta.oracles import SIX_LABELS, SIX_POINTS
from pitta.stream import Window


def _trace(g_norms, entropies=None):
    tr = RunTrace()
    for s, g in enumerate(g_norms):
        tr.append(step=s, g_hat_norm=g, entropy=0.0 if entropies is None else entropies[s])
    return tr


def test_violation_rate_counts_band_exits():
    tr = _trace([1.0, 0.89, 1.1, 1.2, 0.9])
    assert list(tr.column("violation")) == [False, True, False, True, False]
    assert violation_rate(tr) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        violation_rate(RunTrace())


def test_trace_rejects_gaps_and_unknown_values():
    tr = RunTrace()
    tr.append(step=0)
    with pytest.raises(ValueError):
        tr.append(step=2)
    with pytest.raises(ValueError):
        tr.append(step=1, schedule_decision="late")
    with pytest.raises(ValueError):
        tr.append(step=1, colour=1)
    with pytest.raises(KeyError):
        tr.column("colour")


def test_band_deviation():
    np.testing.assert_allclose(band_deviation([0.5, 1.0, 1.5]), [0.4, 0.0, 0.4])


def test_scissor_is_negative_when_entropy_falls_as_violations_rise():
    g = [1.0] * 5 + [1.3] * 5
    ent = list(np.linspace(1.0, 0.1, 10))
    assert scissor_correlation(_trace(g, ent)) < -0.8
    # constant violation flag falls back to the band deviation
    g = list(np.linspace(1.2, 1.6, 10))
    assert scissor_correlation(_trace(g, ent)) == pytest.approx(-1.0)
    assert scissor_correlation(_trace([1.0] * 10, ent)) == 0.0


def test_silhouette_six_points_matches_oracle_and_sklearn():
    ours = silhouette(np.array(SIX_POINTS), np.array(SIX_LABELS))
    assert ours == pytest.approx(0.7590442039611487, rel=1e-12)
    assert ours == pytest.approx(silhouette_score(np.array(SIX_POINTS), SIX_LABELS), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-5, 5)), st.integers(2, 4))
def test_silhouette_agrees_with_sklearn(x, k):
    labels = np.arange(12) % k
    if len(np.unique(x, axis=0)) < 12:
        return
    assert silhouette(x, labels) == pytest.approx(silhouette_score(x, labels), abs=1e-10)


def test_silhouette_edge_cases():
    assert silhouette(np.array([[0.0], [1.0], [5.0]]), np.array([0, 0, 1])) == pytest.approx(
        (1 - 1 / 5 + 1 - 1 / 4) / 3)
    assert silhouette(np.zeros((4, 2)), np.array([0, 0, 1, 1])) == 0.0
    with pytest.raises(ValueError):
        silhouette(np.zeros((3, 2)), np.array([0, 0, 0]))


def _windows(tag, n=6, label=0):
    rng = np.random.default_rng(len(tag) + n)
    return [Window(rng.normal(size=(64, 3)), i % 3, 0, 50.0, (tag, i)) for i in range(n)]


def test_provenance_overlap_is_rejected():
    held = _windows("held")
    check_disjoint(held, _windows("stream"))
    with pytest.raises(ProvenanceOverlapError):
        check_disjoint(held, held[:1])
    with pytest.raises(ProvenanceOverlapError):
        check_disjoint([Window(np.zeros((8, 3)), 0)], [])


def test_retention_schedule_and_heldout_is_read_only():
    model = perturbed_model(3)
    held = _windows("held")
    before = [w.samples.copy() for w in held]
    calls = []
    curve = heldout_eval(model, held, 3, 7, calls.append)
    assert [s for s, _ in curve] == [0, 3, 6, 7]
    assert calls == list(range(7))
    assert all(np.array_equal(a, w.samples) for a, w in zip(before, held))
    assert len({a for _, a in curve}) == 1
    mon = RetentionMonitor(held, 2)
    with pytest.raises(ValueError):
        RetentionMonitor(held, 0)
    mon.observe(0, model)
    assert mon.finish(0, model) == mon.curve and len(mon.curve) == 1


def test_exports_are_written_with_headers(tmp_path):
    tr = _trace([1.0, 0.5])
    rows = ribbon_export(tr)
    assert rows[1] == (1, 0.5, 0.9, 1.1)
    paths = export_run(tr, tmp_path, "r", retention=[(0, 0.5)], silhouettes=[("T0", 0, 0.1)])
    assert sorted(p.name for p in paths) == ["r.retention.csv", "r.ribbon.csv", "r.silhouette.csv",
                                             "r.trace.csv"]
    lines = (tmp_path / "r.trace.csv").read_text().splitlines()
    assert lines[0].split(",") == list(TRACE_COLUMNS)
    assert lines[2].split(",")[TRACE_COLUMNS.index("violation")] == "1"
