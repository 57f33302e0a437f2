"""Failure diagnostics: violation rate, feasibility ribbon, retention, silhouette.

Everything here is a pure function of a finished ``RunTrace`` or of a model
snapshot, except ``RetentionMonitor`` which only reads the model it is given.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

from .backbone import Backbone, accuracy, forward
from .losses import BAND_HI, BAND_LO

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "step", "phase", "online_acc", "entropy", "g_hat_norm", "violation",
    "spectral_entropy", "w_t_mean", "lambda_grav_t", "lambda_spec_t",
    "schedule_decision", "updated", "l_stat", "l_grav", "l_temp", "l_spec", "total",
)
SCHEDULE_DECISIONS = ("safe", "delayed", "dropped", "no-update")


def in_band(g_norm) -> np.ndarray:
    g = np.asarray(g_norm, dtype=np.float64)
    return (g >= BAND_LO) & (g <= BAND_HI)


@dataclass
class RunTrace:
    """Per-step record of one run. Rows are appended in step order."""

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, **values) -> None:
        if values.get("step", len(self.rows)) != len(self.rows):
            raise ValueError(f"trace steps must be contiguous; expected {len(self.rows)}")
        if values.get("schedule_decision", "no-update") not in SCHEDULE_DECISIONS:
            raise ValueError(f"unknown schedule decision {values['schedule_decision']!r}")
        row = {k: 0.0 for k in TRACE_COLUMNS}
        row.update(step=len(self.rows), schedule_decision="no-update", updated=False)
        row.update(values)
        unknown = set(row) - set(TRACE_COLUMNS)
        if unknown:
            raise ValueError(f"unknown trace columns {sorted(unknown)}")
        row["violation"] = not bool(in_band(row["g_hat_norm"]))
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([r[name] for r in self.rows])


def violation_rate(trace: RunTrace) -> float:
    """Fraction of steps whose gravity-proxy magnitude leaves [0.9, 1.1] g."""
    if len(trace) == 0:
        raise ValueError("violation rate of an empty trace")
    return float(np.mean(trace.column("violation").astype(np.float64)))


def band_deviation(g_norm) -> np.ndarray:
    """Distance of each magnitude to the feasible band, zero inside it."""
    g = np.asarray(g_norm, dtype=np.float64)
    return np.maximum(BAND_LO - g, 0.0) + np.maximum(g - BAND_HI, 0.0)


def scissor_correlation(trace: RunTrace) -> float:
    """Spearman rank correlation of entropy against physical violation.

    A negative value means entropy falls while violations rise. When the
    violation flag is constant over the run, the band deviation is ranked
    instead; if that is constant too the result is 0.
    """
    ent = trace.column("entropy").astype(np.float64)
    viol = trace.column("violation").astype(np.float64)
    if np.ptp(viol) == 0:
        viol = band_deviation(trace.column("g_hat_norm"))
    if len(ent) < 2 or np.ptp(viol) == 0 or np.ptp(ent) == 0:
        return 0.0
    return float(spearmanr(ent, viol).statistic)


def silhouette(embeddings, labels) -> float:
    """Mean silhouette with Euclidean distances on raw embeddings.

    Singleton clusters score 0, and 0/0 is taken as 0.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("embeddings must be N x D with one label per row")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two classes")
    d = cdist(x, x)
    masks = [y == c for c in classes]
    scores = np.zeros(len(x))
    for i in range(len(x)):
        own = int(np.searchsorted(classes, y[i]))
        n_own = masks[own].sum()
        if n_own == 1:
            continue
        a = d[i, masks[own]].sum() / (n_own - 1)
        b = min(d[i, m].mean() for k, m in enumerate(masks) if k != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def embeddings(model: Backbone, x, mode: str = "eval", chunk: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([forward(model, x[i:i + chunk], mode).z.value
                           for i in range(0, len(x), chunk)])


# ---------------------------------------------------------------------------
# held-out retention


class ProvenanceOverlapError(ValueError):
    pass


def check_disjoint(heldout_windows, stream_windows) -> None:
    """Raise when any held-out provenance tag also occurs in the stream."""
    tags = set()
    for w in heldout_windows:
        if not w.tag:
            raise ProvenanceOverlapError("held-out windows must carry provenance tags")
        tags.add(w.tag)
    shared = sorted({w.tag for w in stream_windows if w.tag} & tags)
    if shared:
        raise ProvenanceOverlapError(f"{len(shared)} held-out windows occur in the stream, e.g. {shared[0]}")


class RetentionMonitor:
    """Held-out accuracy at steps 0, n, 2n, ... and at the end of the stream.

    ``observe(step, model)`` is called before the step-th batch is consumed,
    so the value at step s reflects the parameters after s updates.
    """

    def __init__(self, heldout_windows: Sequence, every_n: int, stream_windows=(),
                 mode: str = "eval"):
        if every_n < 1:
            raise ValueError("every_n must be >= 1")
        check_disjoint(heldout_windows, stream_windows)
        self.x = np.stack([w.samples for w in heldout_windows])
        self.y = np.array([w.label for w in heldout_windows])
        self.every_n = every_n
        self.mode = mode
        self.curve: list = []

    def observe(self, step: int, model: Backbone) -> None:
        if step % self.every_n == 0:
            self.curve.append((step, accuracy(model, self.x, self.y, self.mode)))

    def finish(self, total_steps: int, model: Backbone) -> list:
        if not self.curve or self.curve[-1][0] != total_steps:
            self.curve.append((total_steps, accuracy(model, self.x, self.y, self.mode)))
        return self.curve


def heldout_eval(model: Backbone, heldout_windows, every_n: int, steps: int, step_fn,
                 stream_windows=(), mode: str = "eval") -> list:
    """Drive ``step_fn(step)`` for ``steps`` steps and return the retention curve.

    ``step_fn`` must advance ``model`` in place; the hold-out set is only read.
    """
    mon = RetentionMonitor(heldout_windows, every_n, stream_windows, mode)
    for s in range(steps):
        mon.observe(s, model)
        step_fn(s)
    return mon.finish(steps, model)


# ---------------------------------------------------------------------------
# CSV exports


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])
    return path


def ribbon_export(trace: RunTrace, path=None) -> list:
    """Rows (step, g_hat_norm, band_lo, band_hi) copied from the trace."""
    rows = [(r["step"], r["g_hat_norm"], BAND_LO, BAND_HI) for r in trace.rows]
    if path is not None:
        write_csv(path, ("step", "g_hat_norm", "band_lo", "band_hi"), rows)
    return rows


def export_run(trace: RunTrace, out_dir, run_id: str, retention=None, silhouettes=None) -> list:
    """Write ``{run_id}.{diagnostic}.csv`` files and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_csv(out / f"{run_id}.trace.csv", TRACE_COLUMNS,
                       ([r[c] for c in TRACE_COLUMNS] for r in trace.rows))]
    ribbon_export(trace, out / f"{run_id}.ribbon.csv")
    paths.append(out / f"{run_id}.ribbon.csv")
    if retention is not None:
        paths.append(write_csv(out / f"{run_id}.retention.csv", ("step", "heldout_acc"), retention))
    if silhouettes is not None:
        paths.append(write_csv(out / f"{run_id}.silhouette.csv", ("checkpoint", "step", "silhouette"),
                               silhouettes))
    return paths
