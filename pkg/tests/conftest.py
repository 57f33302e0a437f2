import numpy as np
import pytest

from pitta.backbone import BackboneConfig, build_backbone
from pitta.stream import Batch, make_windows
from pitta.synth import default_activities, generate


def perturbed_model(seed=0, config=None):
    """Random backbone whose norm affine is moved off the identity."""
    model = build_backbone(config or BackboneConfig(), seed)
    rng = np.random.default_rng(seed + 100)
    for k in model.adaptable_names:
        base = 1.0 if k.endswith("gamma") else 0.0
        model.params[k] = base + 0.1 * rng.normal(size=model.params[k].shape)
    return model


def activity_batch(label=1, B=4, T=64, seed=0, rate=50.0):
    spec = default_activities()[label]
    sig = generate(spec, rate, (B + 1) * T / rate, seed)
    return Batch(tuple(make_windows(sig, T, T, label=label, rate_hz=rate)[:B]))


def central_gradient(f, params, names, h=1e-5):
    """Central finite differences of scalar ``f()`` over ``params[name]`` entries."""
    out = {}
    for k in names:
        g = np.zeros_like(params[k])
        for idx in np.ndindex(params[k].shape):
            orig = params[k][idx]
            params[k][idx] = orig + h
            fp = f()
            params[k][idx] = orig - h
            fm = f()
            params[k][idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out[k] = g
    return out


def max_rel_error(analytic: dict, numeric: dict) -> float:
    """max |a - n| / max(|a|, |n|) over all entries, with a 1e-6 floor on the scale.

    Entries that are exactly zero analytically (for example the spectral term
    w.r.t. an input shift) carry only rounding noise of order 1e-11 in the
    central difference; the floor keeps those from dominating the ratio.
    """
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


@pytest.fixture
def model():
    return perturbed_model(0)


@pytest.fixture
def batch():
    return activity_batch(1, B=4, T=64, seed=3)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    item.config._criteria[mark.args[0]] = ("PASS" if rep.passed else "FAIL", item.name, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        status, name, detail = crit[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {name}  {detail}")
