"""Independent brute-force oracles.

Each oracle recomputes a reference value from first principles with plain
Python or explicit sums, never through the package's own numerics, so tests
can compare the implementation against a value that was derived separately.
"""
from __future__ import annotations

import cmath
import math


def js_two_bin(eps: float = 1e-8) -> float:
    """JS((1,0), (0,1)) with the eps-smoothed KL, term by term."""
    P, Q = (1.0, 0.0), (0.0, 1.0)
    M = tuple(0.5 * (p + q) for p, q in zip(P, Q))

    def kl(a, b):
        return sum(x * (math.log(x + eps) - math.log(y + eps)) for x, y in zip(a, b))

    return 0.5 * kl(P, M) + 0.5 * kl(Q, M)


def window_count(n: int = 1000, t: int = 128, s: int = 64) -> int:
    """Number of start offsets k*s with k*s + t <= n, by enumeration."""
    return sum(1 for start in range(0, n, s) if start + t <= n)


def _dft_power(x):
    n = len(x)
    return [abs(sum(x[m] * cmath.exp(-2j * math.pi * k * m / n) for m in range(n))) ** 2
            for k in range(n // 2 + 1)]


def sinusoid_peak_bin(f_hz: float = 2.0, rate_hz: float = 100.0, n: int = 1024) -> int:
    """Argmax over bins 1..n/2 of the direct DFT power of a sine."""
    x = [math.sin(2 * math.pi * f_hz * m / rate_hz) for m in range(n)]
    power = _dft_power(x)
    return max(range(1, n // 2 + 1), key=lambda k: power[k])


def harmonic_power_ratio(f_hz: float = 2.0, rate_hz: float = 100.0, n: int = 1000) -> float:
    """Power at the fundamental over power at the second harmonic for (1, 1.0), (2, 0.5)."""
    x = [math.sin(2 * math.pi * f_hz * m / rate_hz) + 0.5 * math.sin(2 * math.pi * 2 * f_hz * m / rate_hz)
         for m in range(n)]
    power = _dft_power(x)
    k1 = round(f_hz * n / rate_hz)
    return power[k1] / power[2 * k1]


def gravity_ema_residual(alpha: float = 0.9, steps: int = 50) -> float:
    """|g_hat - g| after ``steps`` EMA updates from zero on a constant unit input."""
    g = 0.0
    for _ in range(steps):
        g = alpha * g + (1 - alpha) * 1.0
    return abs(1.0 - g)


def _interp(pos, xs):
    out = []
    last = len(xs) - 1
    for p in pos:
        if p >= last:
            out.append(xs[last])
            continue
        i = int(math.floor(p))
        w = p - i
        out.append(xs[i] * (1 - w) + xs[i + 1] * w)
    return out


def drift_peak_bin(f_hz: float = 2.0, nominal_hz: float = 100.0, effective_hz: float = 120.0,
                   n: int = 256) -> int:
    """Dominant bin of a sine warped by effective/nominal with linear interpolation."""
    ratio = effective_hz / nominal_hz
    x = [math.sin(2 * math.pi * f_hz * m / nominal_hz) for m in range(n)]
    y = _interp([m / ratio for m in range(n)], x)
    power = _dft_power(y)
    return max(range(1, n // 2 + 1), key=lambda k: power[k])


def drift_entropy_change(ratio: float = 0.7, f_hz: float = 2.0, rate_hz: float = 100.0, n: int = 256,
                         eps: float = 1e-8) -> float:
    """Spectral entropy of a warped sine minus that of the original."""
    def se(sig):
        p = _dft_power(sig)[1:n // 2 + 1]
        tot = sum(p)
        return -sum(v / tot * math.log(v / tot + eps) for v in p)

    x = [math.sin(2 * math.pi * f_hz * m / rate_hz) for m in range(n)]
    return se(_interp([m / ratio for m in range(n)], x)) - se(x)


def placement_static_norm(gravity=(1.0, 0.0, 0.0), angle_deg: float = 60.0,
                          gains=(1.3, 1.3, 0.9)) -> float:
    """Magnitude of a static gravity vector after a z rotation and per-axis gains."""
    c, s = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
    gx, gy, gz = gravity
    r = (c * gx - s * gy, s * gx + c * gy, gz)
    return math.sqrt(sum((g * v) ** 2 for g, v in zip(gains, r)))


SIX_POINTS = ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (4.0, 4.0), (5.0, 4.0), (4.0, 6.0))
SIX_LABELS = (0, 0, 0, 1, 1, 1)


def silhouette_six_points(points=SIX_POINTS, labels=SIX_LABELS) -> float:
    """Mean silhouette by explicit pairwise distances."""
    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    scores = []
    for i, p in enumerate(points):
        same = [dist(p, q) for j, q in enumerate(points) if j != i and labels[j] == labels[i]]
        if not same:
            scores.append(0.0)
            continue
        a = sum(same) / len(same)
        b = min(
            sum(dist(p, q) for j, q in enumerate(points) if labels[j] == c)
            / sum(1 for lab in labels if lab == c)
            for c in set(labels) if c != labels[i])
        scores.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return sum(scores) / len(scores)


def schedule_six(latencies=(10.0, 30.0, 10.0, 30.0, 10.0, 30.0), budget: float = 20.0) -> list:
    """Apply steps by walking the three-case rule by hand."""
    out = []
    for s, t in enumerate(latencies):
        if t <= budget:
            out.append(s)
        elif t <= 2 * budget:
            out.append(s + 1)
        else:
            out.append(None)
    return out


def uniform_entropy(F: int = 32) -> float:
    return math.log(F)


ORACLES = {
    "js-two-bin": js_two_bin,
    "window-count": window_count,
    "sinusoid-peak-bin": sinusoid_peak_bin,
    "harmonic-power-ratio": harmonic_power_ratio,
    "gravity-ema-residual": gravity_ema_residual,
    "drift-peak-bin": drift_peak_bin,
    "drift-entropy-change": drift_entropy_change,
    "placement-static-norm": placement_static_norm,
    "silhouette-six-points": silhouette_six_points,
    "schedule-six": schedule_six,
    "uniform-entropy": uniform_entropy,
}


def run_oracle(name: str):
    if name not in ORACLES:
        raise KeyError(name)
    return ORACLES[name]()
