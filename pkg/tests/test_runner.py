import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitta.runner import (PUBLISHED_LATENCY_MS, BudgetDecision, ConfigError, UpdateScheduler, aggregate,
                          build_pool, build_schedules, config_from_dict, derive_seed, effective_schedule,
                          load_config, prepare_seed, resolve_out_dir, run_experiment, run_stream,
                          time_constrained_classify)

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))


def tiny(**over):
    raw = {"name": "tiny", "protocol": "long-sequence", "seeds": [3],
           "data": {"source_seconds": 30.0, "test_seconds": 10.0, "heldout_seconds": 6.0,
                    "source_subjects": 2},
           "pretrain": {"epochs": 1}, "protocol_params": {"phase_len": 4, "heldout_every": 5}}
    for k, v in over.items():
        if isinstance(v, dict):
            raw.setdefault(k, {}).update(v)
        else:
            raw[k] = v
    return config_from_dict(raw)


def test_classifier_three_cases():
    assert time_constrained_classify(20.0, 20.0) == "safe"
    assert time_constrained_classify(20.1, 20.0) == "delayed"
    assert time_constrained_classify(40.0, 20.0) == "delayed"
    assert time_constrained_classify(40.1, 20.0) == "dropped"
    assert BudgetDecision(10.0, 20.0).decision == "safe"
    with pytest.raises(ValueError):
        time_constrained_classify(0.0, 20.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 500), st.floats(0.01, 500))
def test_classifier_is_monotone_in_latency(t, budget):
    rank = {"safe": 0, "delayed": 1, "dropped": 2}
    assert rank[time_constrained_classify(t, budget)] <= rank[time_constrained_classify(t * 1.5, budget)]


def test_effective_schedule_matches_frozen_oracle():
    assert effective_schedule((10.0, 30.0, 10.0, 30.0, 10.0, 30.0), 20.0) == [0, 2, 2, 4, 4, 6]
    assert effective_schedule((50.0, 10.0), 20.0) == [None, 1]


def test_scheduler_supersedes_a_pending_update():
    sch = UpdateScheduler()
    sch.park(0, "a")
    sch.park(0, "b")
    assert sch.superseded == 1
    assert sch.due(0) is None
    assert sch.due(1) == (0, "b")
    assert sch.due(2) is None


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.name and cfg.seeds


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("name = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
    with pytest.raises(ConfigError):
        config_from_dict({"protocol": "sideways"})
    with pytest.raises(ConfigError):
        config_from_dict({"colour": "red"})
    with pytest.raises(ConfigError):
        config_from_dict({"backbone": {"num_classes": 4}})
    with pytest.raises(ConfigError):
        config_from_dict({"protocol": "factorized-shift",
                          "protocol_params": {"conditions": [{"kind": "drift", "ratio": 9.0}]}})
    with pytest.raises(ConfigError):
        config_from_dict({"protocol": "time-constrained", "methods": ["tent"],
                          "protocol_params": {"latency_source": "published", "k_list": [5]}})


def test_config_details():
    cfg = config_from_dict({"pitta": {"update_interval": "never"},
                            "backbone": {"blocks": [[8, 3, 2, 1]], "num_classes": 2},
                            "data": {"activity": [{"kind": "static", "gravity_dir": [1, 0, 0]},
                                                  {"kind": "periodic", "fundamental_hz": 2.0,
                                                   "amplitude_g": [0.2, 0.2, 0.2]}]}})
    assert cfg.pitta.update_interval is None
    assert cfg.backbone.blocks == ((8, 3, 2, 1),)
    assert len(cfg.data.specs()) == 2


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(1, "source") == derive_seed(1, "source")
    assert len({derive_seed(1, p) for p in ("source", "test", "heldout", "stream")}) == 4


def test_pools_have_distinct_provenance():
    cfg = tiny()
    a = build_pool(cfg.data.specs(), cfg.data, 10.0, 1, "test")
    b = build_pool(cfg.data.specs(), cfg.data, 10.0, 2, "heldout")
    ta = {w.tag for ws in a.values() for w in ws}
    tb = {w.tag for ws in b.values() for w in ws}
    assert ta and tb and not ta & tb


@pytest.fixture(scope="module")
def seed_data():
    cfg = tiny()
    return cfg, prepare_seed(cfg, 3)


def test_schedule_variants(seed_data):
    cfg, sd = seed_data
    grid = build_schedules(replace(cfg, protocol="lr-grid"), sd)
    assert [v for v, *_ in grid] == ["eta0.0001", "eta0.001", "eta0.01"]
    assert [p.eta for _, _, p, _ in grid] == [1e-4, 1e-3, 1e-2]
    (variant, sched, _, bounds), = build_schedules(replace(cfg, protocol="compound-shift"), sd)
    assert len(sched) == 4 * 3 * 4
    assert bounds == (0, 12, 24, 36)
    assert sched.applied[11] == () and sched.applied[12] == ("rotation",)
    assert sched.applied[-1] == ("rotation", "placement", "drift")


def test_run_stream_does_not_mutate_the_source_model(seed_data):
    cfg, sd = seed_data
    (_, sched, pcfg, _), = build_schedules(cfg, sd)
    before = sd.model.adaptable_bytes()
    res = run_stream(sd.model, sched, "tent", replace(pcfg, eta=1e-2), sd.heldout, 5, "eval", (0, len(sched)))
    assert sd.model.adaptable_bytes() == before
    assert res["model"].adaptable_bytes() != before
    assert res["frozen_identical"] and res["n_updates"] == len(sched)
    assert [name for name, _, _ in res["silhouettes"]] == ["T0", "T1"]
    assert [s for s, _ in res["retention"]] == [0, 5, 10, 12]


def test_published_latency_schedule(seed_data):
    cfg, sd = seed_data
    (_, sched, pcfg, _), = build_schedules(cfg, sd)
    res = run_stream(sd.model, sched, "pitta", replace(pcfg, update_interval=1), None,
                     budget_ms=20.0, latency_source="published")
    # 45.1 ms against a 20 ms budget is beyond twice the budget: every update is dropped
    assert res["decisions"] == {"safe": 0, "delayed": 0, "dropped": len(sched)}
    assert res["model"].adaptable_bytes() == sd.model.adaptable_bytes()
    res = run_stream(sd.model, sched, "pitta", replace(pcfg, update_interval=10), None,
                     budget_ms=20.0, latency_source="published")
    assert PUBLISHED_LATENCY_MS[("pitta", 10)] <= 20.0
    assert res["decisions"]["safe"] == 2 and res["n_updates"] == 2


def test_aggregate_single_seed_has_zero_std():
    runs = [dict(variant="v", method="m", budget_ms=None,
                 metrics=dict(online_acc=0.5, vr=0.1, segment_online_acc=[0.5]))]
    agg = aggregate(runs)["v|m"]
    assert agg["online_acc"] == {"mean": 0.5, "std": 0.0, "n": 1}


def test_out_dir_precedence(monkeypatch, tmp_path):
    cfg = tiny()
    monkeypatch.delenv("PITTA_OUT", raising=False)
    assert resolve_out_dir(cfg) == Path(cfg.out_dir)
    monkeypatch.setenv("PITTA_OUT", str(tmp_path / "env"))
    assert resolve_out_dir(cfg) == tmp_path / "env"
    assert resolve_out_dir(cfg, tmp_path / "cli") == tmp_path / "cli"


def test_run_experiment_writes_report_and_manifest(tmp_path):
    cfg = tiny(seeds=[3, 4])
    report = run_experiment(cfg, tmp_path)
    assert not report["partial"] and len(report["runs"]) == 6
    names = {p.name for p in tmp_path.iterdir()}
    assert {"report.json", "MANIFEST", "tiny.summary.csv", "tiny.base.pitta.s3.trace.csv"} <= names
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["schema_version"] == 1 and set(data["aggregate"]) == {
        "base|pitta", "base|source-only", "base|tent"}
    manifest = (tmp_path / "MANIFEST").read_text().splitlines()
    assert len(manifest) == len(names) - 1
    src = data["aggregate"]["base|source-only"]["heldout_curve"]
    assert len({c["mean"] for c in src}) == 1


def test_failed_seed_marks_the_report_partial(tmp_path, monkeypatch):
    import pitta.runner as runner

    real = runner.prepare_seed

    def flaky(cfg, seed):
        if seed == 4:
            raise RuntimeError("boom")
        return real(cfg, seed)

    monkeypatch.setattr(runner, "prepare_seed", flaky)
    report = run_experiment(tiny(seeds=[3, 4], methods=["source-only"]), tmp_path)
    assert report["partial"] and "boom" in report["errors"]["4"]
    assert len(report["runs"]) == 1
    assert np.isfinite(report["runs"][0]["metrics"]["online_acc"])
