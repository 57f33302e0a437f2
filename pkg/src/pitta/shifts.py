"""Physical deployment shifts: rotation, placement change, sampling-rate drift.

Compound stages apply in the fixed order rotation -> placement -> drift.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .stream import Batch, StreamSchedule, Window

DRIFT_RATIO_RANGE = (0.5, 2.0)
OPERATOR_ORDER = ("rotation", "placement", "drift")


@dataclass(frozen=True)
class RotationSpec:
    axis: tuple = (0.0, 0.0, 1.0)
    angle_deg: float = 0.0

    def matrix(self) -> np.ndarray:
        axis = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("rotation axis must be nonzero")
        return Rotation.from_rotvec(axis / n * np.deg2rad(self.angle_deg)).as_matrix()


@dataclass(frozen=True)
class PlacementSpec:
    rotation: RotationSpec = RotationSpec()
    per_axis_gain: tuple = (1.0, 1.0, 1.0)
    extra_noise_std_g: float = 0.0

    def __post_init__(self):
        gain = np.asarray(self.per_axis_gain, dtype=np.float64)
        if gain.shape != (3,) or not np.all(np.isfinite(gain)) or np.any(gain <= 0):
            raise ValueError("placement gains must be three finite positive values")
        if self.extra_noise_std_g < 0:
            raise ValueError("placement noise must be nonnegative")


@dataclass(frozen=True)
class DriftSpec:
    effective_rate_hz: float
    nominal_rate_hz: float = 100.0

    @property
    def ratio(self) -> float:
        return self.effective_rate_hz / self.nominal_rate_hz

    def __post_init__(self):
        if self.effective_rate_hz <= 0 or self.nominal_rate_hz <= 0:
            raise ValueError("rates must be positive")
        lo, hi = DRIFT_RATIO_RANGE
        if not lo <= self.ratio <= hi:
            raise ValueError(f"drift ratio {self.ratio:.3f} outside supported [{lo}, {hi}]")


@dataclass(frozen=True)
class CompoundStage:
    start_step: int
    rotation: RotationSpec | None = None
    placement: PlacementSpec | None = None
    drift: DriftSpec | None = None


PLACEMENT_PRESETS = {
    "waist->arm": PlacementSpec(RotationSpec((0, 0, 1), 60.0), (1.3, 1.3, 0.9), 0.02),
    "waist->chest": PlacementSpec(RotationSpec((1, 0, 0), 30.0), (1.0, 1.1, 1.15), 0.01),
}


def _with_acc(w: Window, acc: np.ndarray) -> Window:
    s = w.samples.copy()
    s[:, :3] = acc
    return replace(w, samples=s)


def apply_rotation(w: Window, r: RotationSpec) -> Window:
    return _with_acc(w, w.samples[:, :3] @ r.matrix().T)


def apply_placement(w: Window, p: PlacementSpec, rng: np.random.Generator | None = None) -> Window:
    acc = w.samples[:, :3] @ p.rotation.matrix().T * np.asarray(p.per_axis_gain)
    if p.extra_noise_std_g > 0:
        if rng is None:
            raise ValueError("placement noise needs a seeded generator")
        acc = acc + rng.normal(0.0, p.extra_noise_std_g, size=acc.shape)
    return _with_acc(w, acc)


def warp_samples(x: np.ndarray, ratio: float) -> np.ndarray:
    """Resample so content recorded at ``ratio`` x nominal rate is read at nominal rate.

    Output sample n takes the input value at fractional index n / ratio by
    linear interpolation; positions past the end hold the last sample.
    """
    T = x.shape[0]
    pos = np.arange(T) / ratio
    src = np.arange(T)
    return np.stack([np.interp(pos, src, x[:, c]) for c in range(x.shape[1])], axis=1)


def apply_sampling_drift(w: Window, d: DriftSpec) -> Window:
    """Warp the time axis of every channel; the window keeps its nominal rate."""
    if d.ratio == 1.0:
        return replace(w, samples=w.samples.copy())
    return replace(w, samples=warp_samples(w.samples, d.ratio))


def _batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step), 0xC0])


def active_operators(stages, step: int) -> dict:
    """Accumulated shifts in force at ``step``.

    Rotations compose in stage order; a later placement or drift replaces an
    earlier one of the same kind.
    """
    rot = None
    place = None
    drift = None
    for st in stages:
        if st.start_step > step:
            break
        if st.rotation is not None:
            m = st.rotation.matrix()
            rot = m if rot is None else m @ rot
        if st.placement is not None:
            place = st.placement
        if st.drift is not None:
            drift = st.drift
    return {"rotation": rot, "placement": place, "drift": drift}


def _validate_stages(stages) -> None:
    starts = [st.start_step for st in stages]
    if len(set(starts)) != len(starts):
        raise ValueError("compound stages have duplicate start steps")
    if starts != sorted(starts):
        raise ValueError("compound stages must be ordered by start_step")


def transform_window(w: Window, ops: dict, rng: np.random.Generator) -> Window:
    if ops["rotation"] is not None:
        w = _with_acc(w, w.samples[:, :3] @ ops["rotation"].T)
    if ops["placement"] is not None:
        w = apply_placement(w, ops["placement"], rng)
    if ops["drift"] is not None:
        w = apply_sampling_drift(w, ops["drift"])
    return w


def apply_compound(schedule: StreamSchedule, stages, seed: int) -> StreamSchedule:
    """Transform each batch by the shifts active at its step.

    The returned schedule carries ``applied``: one tuple of operator names per
    batch, always listed in OPERATOR_ORDER.
    """
    stages = list(stages)
    _validate_stages(stages)
    batches, applied = [], []
    for step, batch in enumerate(schedule.batches):
        ops = active_operators(stages, step)
        names = tuple(k for k in OPERATOR_ORDER if ops[k] is not None)
        applied.append(names)
        if not names:
            batches.append(batch)
            continue
        rng = _batch_rng(seed, step)
        batches.append(Batch(tuple(transform_window(w, ops, rng) for w in batch.windows)))
    return StreamSchedule(batches, schedule.phase_boundaries, schedule.phase_labels,
                          dict(schedule.cycled), schedule.sampling, applied)
