"""Windows, batches and ordered stream schedules."""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

WINDOW_MAGIC = b"PITW"
WINDOW_VERSION = 1


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Window:
    """One T x C inertial segment. Channels 0-2 are the accelerometer triad in g."""

    samples: np.ndarray
    label: int
    step_index: int = 0
    nominal_rate_hz: float = 100.0
    tag: tuple = ()  # provenance, e.g. ("heldout", 17)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 4 or s.shape[1] < 3:
            raise ValueError(f"window must be T x C with T >= 4, C >= 3; got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("window contains non-finite samples")
        if self.step_index < 0:
            raise ValueError("step_index must be nonnegative")
        if self.nominal_rate_hz <= 0:
            raise ValueError("nominal_rate_hz must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    @property
    def C(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class Batch:
    windows: tuple

    def __post_init__(self):
        ws = tuple(self.windows)
        if not ws:
            raise ValueError("batch needs at least one window")
        shape, rate = ws[0].samples.shape, ws[0].nominal_rate_hz
        for w in ws[1:]:
            if w.samples.shape != shape or w.nominal_rate_hz != rate:
                raise ValueError("batch windows must share T, C and nominal rate")
        object.__setattr__(self, "windows", ws)

    def __len__(self):
        return len(self.windows)

    @property
    def data(self) -> np.ndarray:
        """Stacked samples, shape (B, T, C)."""
        return np.stack([w.samples for w in self.windows])

    @property
    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)


@dataclass(eq=False)
class StreamSchedule:
    batches: list
    phase_boundaries: tuple = ()
    phase_labels: tuple = ()
    cycled: dict = field(default_factory=dict)
    sampling: str = "without-replacement"
    applied: list = field(default_factory=list)  # shift operators per batch

    def __post_init__(self):
        b = tuple(self.phase_boundaries)
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("phase boundaries must be strictly increasing")
        self.phase_boundaries = b

    def __len__(self):
        return len(self.batches)

    def phase_of(self, step: int) -> int:
        return int(np.searchsorted(self.phase_boundaries, step, side="right"))

    def windows(self) -> list:
        return [w for b in self.batches for w in b.windows]


def make_windows(signal, window_len: int, stride: int, label: int = 0,
                 rate_hz: float = 100.0, start_step: int = 0, tag_prefix: str = "") -> list:
    """Cut an N x C signal into windows starting at k * stride, in order."""
    signal = np.asarray(signal, dtype=np.float64)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = signal.shape[0]
    if n < window_len:
        raise EmptyInputError(f"signal length {n} < window length {window_len}")
    count = (n - window_len) // stride + 1
    return [
        Window(signal[k * stride:k * stride + window_len].copy(), int(label),
               start_step + k, rate_hz, (tag_prefix, k) if tag_prefix else ())
        for k in range(count)
    ]


def batch_iter(windows: Sequence[Window], batch_size: int):
    """Group windows into consecutive batches. Returns (batches, dropped)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    full = len(windows) // batch_size
    batches = [Batch(tuple(windows[i * batch_size:(i + 1) * batch_size])) for i in range(full)]
    dropped = len(windows) - full * batch_size
    if dropped:
        log.info("batch_iter dropped %d trailing windows", dropped)
    return batches, dropped


def class_sorted_stream(windows_by_class: Mapping[int, Sequence[Window]], phase_len: int,
                        batch_size: int, class_order: Sequence[int] | None = None,
                        replacement: bool = False, seed: int = 0) -> StreamSchedule:
    """Long single-class phases of ``phase_len`` batches each.

    Without replacement, windows are taken in pool order and the pool is
    cycled when it runs short (recorded in ``cycled``). With replacement,
    indices are drawn uniformly from the pool.
    """
    if not windows_by_class:
        raise ValueError("class_sorted_stream needs at least one class")
    order = list(windows_by_class) if class_order is None else list(class_order)
    need = phase_len * batch_size
    rng = np.random.default_rng(seed)
    batches, boundaries, cycled = [], [], {}
    pos = 0
    for p, cls in enumerate(order):
        pool = list(windows_by_class[cls])
        if not pool:
            raise ValueError(f"class {cls} has an empty pool")
        if replacement:
            idx = rng.integers(0, len(pool), size=need)
        else:
            idx = np.arange(need) % len(pool)
        cycled[cls] = len(pool) < need
        if cycled[cls] and not replacement:
            log.info("class %s pool of %d cycled to fill %d windows", cls, len(pool), need)
        if p > 0:
            boundaries.append(len(batches))
        for b in range(phase_len):
            chunk = []
            for j in idx[b * batch_size:(b + 1) * batch_size]:
                chunk.append(replace(pool[int(j)], step_index=pos))
                pos += 1
            batches.append(Batch(tuple(chunk)))
    return StreamSchedule(batches, tuple(boundaries), tuple(order), cycled,
                          "with-replacement" if replacement else "without-replacement")


# ---------------------------------------------------------------------------
# serialization


def _csv_header(T: int, C: int) -> list:
    return ["step", "label", "rate_hz"] + [f"c{c}_t{t}" for c in range(C) for t in range(T)]


def write_windows_csv(windows: Sequence[Window], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if not windows:
            wr.writerow(["step", "label", "rate_hz"])
            return
        T, C = windows[0].samples.shape
        wr.writerow(_csv_header(T, C))
        for w in windows:
            wr.writerow([w.step_index, w.label, repr(float(w.nominal_rate_hz))]
                        + [repr(float(v)) for v in w.samples.T.ravel()])


def read_windows_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        cols = header[3:]
        if not cols:
            return []
        C = 1 + max(int(h.split("_")[0][1:]) for h in cols)
        T = len(cols) // C
        out = []
        for row in rd:
            vals = np.array([float(v) for v in row[3:]]).reshape(C, T).T
            out.append(Window(vals, int(row[1]), int(row[0]), float(row[2])))
        return out


def write_windows_bin(windows: Sequence[Window], path) -> None:
    """Layout: b"PITW", u8 version, u32 n, u32 T, u32 C, then per window
    f64 [step, label, rate, samples row-major T x C], all little-endian."""
    n = len(windows)
    T, C = windows[0].samples.shape if n else (0, 0)
    with open(path, "wb") as fh:
        fh.write(WINDOW_MAGIC + struct.pack("<BIII", WINDOW_VERSION, n, T, C))
        for w in windows:
            head = np.array([w.step_index, w.label, w.nominal_rate_hz], dtype="<f8")
            fh.write(head.tobytes() + w.samples.astype("<f8").tobytes())


def read_windows_bin(path) -> list:
    raw = Path(path).read_bytes()
    if raw[:4] != WINDOW_MAGIC:
        raise ValueError("not a PITW container")
    version, n, T, C = struct.unpack_from("<BIII", raw, 4)
    if version != WINDOW_VERSION:
        raise ValueError(f"unsupported PITW version {version}")
    rec = 3 + T * C
    data = np.frombuffer(raw, dtype="<f8", offset=4 + 13, count=n * rec).reshape(n, rec)
    return [Window(r[3:].reshape(T, C).copy(), int(r[1]), int(r[0]), float(r[2])) for r in data]
