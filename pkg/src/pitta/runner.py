"""Experiment orchestration: configs, protocols, time-constrained scheduling, reports.

A config names a protocol, the methods to compare and a list of seeds. For
every seed one source model and one stream schedule are built and shared by
all methods, so methods always see byte-identical inputs.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as tomli
else:
    import tomli

from . import __version__
from .backbone import BackboneConfig, init_pretrained, sgd_step
from .diagnostics import (RetentionMonitor, RunTrace, embeddings, export_run, scissor_correlation,
                          silhouette, violation_rate, write_csv)
from .engine import AdaptState, PittaConfig, run_step
from .shifts import PLACEMENT_PRESETS, CompoundStage, DriftSpec, RotationSpec, apply_compound
from .stream import class_sorted_stream, make_windows
from .synth import ActivitySpec, class_seed, default_activities, generate

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
PROTOCOLS = ("long-sequence", "factorized-shift", "compound-shift", "lr-grid", "interval-sweep",
             "time-constrained")
METHODS = ("source-only", "tent", "pitta")
DECISIONS = ("safe", "delayed", "dropped")

# Published per-step latencies in ms, keyed by (method, update interval K).
PUBLISHED_LATENCY_MS = {
    ("source-only", 1): 15.2,
    ("tent", 1): 38.5,
    ("ttt", 1): 82.4,
    ("pitta", 1): 45.1,
    ("pitta", 5): 21.2,
    ("pitta", 10): 18.1,
    ("pitta", 20): 16.7,
    ("pitta", 50): 15.8,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# time-constrained scoring


def time_constrained_classify(t_adapt_ms: float, t_budget_ms: float) -> str:
    """safe if t <= budget, delayed if budget < t <= 2 budget, dropped beyond."""
    if not (t_adapt_ms > 0 and t_budget_ms > 0):
        raise ValueError("latency and budget must be positive")
    if t_adapt_ms <= t_budget_ms:
        return "safe"
    if t_adapt_ms <= 2 * t_budget_ms:
        return "delayed"
    return "dropped"


@dataclass(frozen=True)
class BudgetDecision:
    t_adapt_ms: float
    t_budget_ms: float
    decision: str = ""

    def __post_init__(self):
        object.__setattr__(self, "decision", time_constrained_classify(self.t_adapt_ms, self.t_budget_ms))


class UpdateScheduler:
    """Holds at most one delayed update.

    Within step s the order is: gradient computed on the current parameters,
    then the pending update due at s is applied, then this step's update is
    applied (safe), parked until s + 1 (delayed) or discarded (dropped).
    """

    def __init__(self):
        self.pending = None  # (due_step, origin_step, payload)
        self.superseded = 0

    def due(self, step: int):
        if self.pending is not None and self.pending[0] <= step:
            _, origin, payload = self.pending
            self.pending = None
            return origin, payload
        return None

    def park(self, step: int, payload) -> None:
        if self.pending is not None:
            log.info("delayed update from step %d superseded by step %d", self.pending[1], step)
            self.superseded += 1
        self.pending = (step + 1, step, payload)


def effective_schedule(latencies_ms, budget_ms: float) -> list:
    """Apply step for each step's update: itself, the next step, or None if dropped.

    An update parked past the last step keeps its nominal apply step.
    """
    lat = [float(v) for v in latencies_ms]
    if any(not v > 0 for v in lat):
        raise ValueError("latencies must be positive")
    sched = UpdateScheduler()
    applied = [None] * len(lat)
    for s, t in enumerate(lat):
        hit = sched.due(s)
        if hit is not None:
            applied[hit[0]] = s
        decision = time_constrained_classify(t, budget_ms)
        if decision == "safe":
            applied[s] = s
        elif decision == "delayed":
            sched.park(s, None)
    if sched.pending is not None:
        applied[sched.pending[1]] = sched.pending[0]
    return applied


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    rate_hz: float = 50.0
    window_len: int = 64
    stride: int = 32
    batch_size: int = 16
    source_seconds: float = 200.0
    test_seconds: float = 200.0
    heldout_seconds: float = 40.0
    source_subjects: int = 8  # independent recordings pooled for pretraining
    activities: tuple = ()  # empty: the built-in three-class set

    def specs(self) -> list:
        return list(self.activities) if self.activities else default_activities()


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32
    homogeneous_frac: float = 0.0


@dataclass(frozen=True)
class ProtocolConfig:
    phase_len: int = 1000
    class_order: tuple = ()
    replacement: bool = False
    heldout_every: int = 100
    heldout_mode: str = "eval"
    conditions: tuple = ()  # factorized shifts, each a dict
    stages: tuple = ()  # compound stages, each a dict with "kind"
    cycles: int = 4  # compound: class cycles, one per stage
    eta_grid: tuple = (1e-4, 1e-3, 1e-2)
    k_list: tuple = (1, 5, 10, 20, 50)
    budgets_ms: tuple = (50.0, 20.0)
    latency_source: str = "measured"  # "measured" | "published"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    protocol: str = "long-sequence"
    methods: tuple = METHODS
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    workers: int = 1
    data: DataConfig = DataConfig()
    backbone: BackboneConfig = BackboneConfig()
    pretrain: PretrainConfig = PretrainConfig()
    pitta: PittaConfig = PittaConfig()
    params: ProtocolConfig = ProtocolConfig()

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown or missing methods {bad}")
        if self.backbone.num_classes != len(self.data.specs()):
            raise ConfigError("backbone.num_classes must match the number of activities")
        if self.data.window_len < self.backbone.min_length():
            raise ConfigError("window_len shorter than the backbone receptive field")
        p = self.params
        if p.heldout_mode not in ("eval", "train"):
            raise ConfigError(f"unknown heldout_mode {p.heldout_mode!r}")
        if p.latency_source not in ("measured", "published"):
            raise ConfigError(f"unknown latency_source {p.latency_source!r}")
        if p.phase_len < 1 or p.heldout_every < 1 or self.workers < 1:
            raise ConfigError("phase_len, heldout_every and workers must be positive")
        for c in p.conditions:
            _condition_stage(c, self.data.rate_hz)
        for st in p.stages:
            _stage_from_dict(st, 0, self.data.rate_hz)
        if self.protocol == "time-constrained" and p.latency_source == "published":
            for m in self.methods:
                for k in p.k_list:
                    if m != "source-only" and (m, k) not in PUBLISHED_LATENCY_MS:
                        raise ConfigError(f"no published latency for {m} at K={k}")
        return self


def _rotation(d) -> RotationSpec:
    return RotationSpec(tuple(d.get("axis", (0.0, 0.0, 1.0))), float(d.get("angle_deg", 0.0)))


def _stage_from_dict(d: dict, start: int, rate_hz: float) -> CompoundStage:
    kind = d.get("kind")
    if kind == "rotation":
        return CompoundStage(start, rotation=_rotation(d))
    if kind == "placement":
        preset = d.get("preset", "waist->arm")
        if preset not in PLACEMENT_PRESETS:
            raise ConfigError(f"unknown placement preset {preset!r}")
        return CompoundStage(start, placement=PLACEMENT_PRESETS[preset])
    if kind == "drift":
        try:
            eff = float(d["effective_rate_hz"]) if "effective_rate_hz" in d else float(d["ratio"]) * rate_hz
            return CompoundStage(start, drift=DriftSpec(eff, rate_hz))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad drift stage {d}: {exc}") from exc
    raise ConfigError(f"unknown shift kind {kind!r}")


def _condition_stage(d: dict, rate_hz: float):
    if d.get("kind") == "none":
        return None
    return _stage_from_dict(d, 0, rate_hz)


def condition_label(d: dict) -> str:
    kind = d.get("kind", "none")
    if kind == "rotation":
        return f"rot{d.get('angle_deg', 0):g}"
    if kind == "placement":
        return "place-" + d.get("preset", "waist->arm").replace("->", "-")
    if kind == "drift":
        return f"drift{d.get('ratio', d.get('effective_rate_hz', ''))}"
    return "none"


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, list) else v


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    try:
        data = dict(raw.pop("data", {}))
        acts = data.pop("activity", None)
        if acts:
            data["activities"] = tuple(
                ActivitySpec(a["kind"], tuple(a.get("gravity_dir", (0.0, 0.0, 1.0))),
                             float(a.get("fundamental_hz", 0.0)), tuple(a.get("amplitude_g", (0.0, 0.0, 0.0))),
                             float(a.get("noise_std_g", 0.0)), _tuple(a.get("harmonics", [[1, 1.0]])),
                             a.get("name", "")) for a in acts)
        bb = {k: _tuple(v) for k, v in raw.pop("backbone", {}).items()}
        pitta = dict(raw.pop("pitta", {}))
        if pitta.get("update_interval") == "never":
            pitta["update_interval"] = None
        params = {k: _tuple(v) for k, v in raw.pop("protocol_params", {}).items()}
        for key in ("conditions", "stages"):
            if key in params:
                params[key] = tuple(dict(x) for x in params[key])
        pre = PretrainConfig(**raw.pop("pretrain", {}))
        top = {k: _tuple(v) for k, v in raw.items()}
        cfg = ExperimentConfig(data=DataConfig(**data), backbone=BackboneConfig(**bb), pretrain=pre,
                               pitta=PittaConfig(**pitta), params=ProtocolConfig(**params), **top)
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg), default=str))


# ---------------------------------------------------------------------------
# data


def derive_seed(seed: int, purpose: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(purpose.encode())]).generate_state(1)[0])


def build_pool(specs, data: DataConfig, seconds: float, seed: int, tag: str, subjects: int = 1) -> dict:
    """Windows per class from ``subjects`` independent recordings splitting ``seconds``."""
    pools = {i: [] for i in range(len(specs))}
    for subj in range(subjects):
        sub_seed = seed if subjects == 1 else derive_seed(seed, f"subject{subj}")
        for i, spec in enumerate(specs):
            sig = generate(spec, data.rate_hz, seconds / subjects, class_seed(sub_seed, i))
            pools[i] += make_windows(sig, data.window_len, data.stride, label=i, rate_hz=data.rate_hz,
                                     tag_prefix=f"{tag}{subj}.{i}")
    return pools


@dataclass
class SeedData:
    seed: int
    model: object
    pretrain: object
    test_pools: dict
    heldout: list


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedData:
    specs = cfg.data.specs()
    src = build_pool(specs, cfg.data, cfg.data.source_seconds, derive_seed(seed, "source"), "src",
                     cfg.data.source_subjects)
    tst = build_pool(specs, cfg.data, cfg.data.test_seconds, derive_seed(seed, "test"), "test")
    ho = build_pool(specs, cfg.data, cfg.data.heldout_seconds, derive_seed(seed, "heldout"), "heldout")
    x = np.stack([w.samples for c in src for w in src[c]])
    y = np.array([w.label for c in src for w in src[c]])
    model, rep = init_pretrained(cfg.backbone, x, y, epochs=cfg.pretrain.epochs,
                                 seed=derive_seed(seed, "pretrain"), lr=cfg.pretrain.lr,
                                 batch_size=cfg.pretrain.batch_size,
                                 homogeneous_frac=cfg.pretrain.homogeneous_frac)
    return SeedData(seed, model, rep, tst, [w for c in ho for w in ho[c]])


def _class_order(cfg: ExperimentConfig, repeats: int = 1) -> list:
    order = list(cfg.params.class_order) or list(range(len(cfg.data.specs())))
    return order * repeats


def build_schedules(cfg: ExperimentConfig, sd: SeedData) -> list:
    """(variant label, schedule, pitta config, stage boundaries) per protocol variant."""
    p = cfg.params
    seed = derive_seed(sd.seed, "stream")
    base = class_sorted_stream(sd.test_pools, p.phase_len, cfg.data.batch_size, _class_order(cfg),
                               p.replacement, seed)
    bounds = (0,) + base.phase_boundaries
    if cfg.protocol == "long-sequence":
        return [("base", base, cfg.pitta, bounds)]
    if cfg.protocol == "lr-grid":
        return [(f"eta{e:g}", base, replace(cfg.pitta, eta=float(e)), bounds) for e in p.eta_grid]
    if cfg.protocol == "interval-sweep":
        return [(f"K{k}", base, replace(cfg.pitta, update_interval=int(k)), bounds) for k in p.k_list]
    if cfg.protocol == "time-constrained":
        return [(f"K{k}", base, replace(cfg.pitta, update_interval=int(k)), bounds) for k in p.k_list]
    if cfg.protocol == "factorized-shift":
        out = []
        for c in p.conditions or ({"kind": "none"},):
            st = _condition_stage(c, cfg.data.rate_hz)
            sched = base if st is None else apply_compound(base, [st], derive_seed(sd.seed, "shift"))
            out.append((condition_label(c), sched, cfg.pitta, bounds))
        return out
    # compound: the class order repeats once per stage; stage i starts at cycle i
    order = _class_order(cfg, p.cycles)
    stream = class_sorted_stream(sd.test_pools, p.phase_len, cfg.data.batch_size, order,
                                 p.replacement, seed)
    per_cycle = p.phase_len * len(_class_order(cfg))
    stages_cfg = p.stages or ({"kind": "rotation", "angle_deg": 60.0},
                              {"kind": "placement", "preset": "waist->arm"},
                              {"kind": "drift", "ratio": 1.2})
    stages = [_stage_from_dict(d, (i + 1) * per_cycle, cfg.data.rate_hz) for i, d in enumerate(stages_cfg)]
    sched = apply_compound(stream, stages, derive_seed(sd.seed, "shift"))
    stage_bounds = tuple(i * per_cycle for i in range(len(stages) + 1))
    return [("compound", sched, cfg.pitta, stage_bounds)]


# ---------------------------------------------------------------------------
# one run


def _latency_for(method: str, k: int, measured_ms: float, source: str) -> float:
    if source == "published":
        return PUBLISHED_LATENCY_MS[(method, k)]
    return measured_ms


def run_stream(model, schedule, method: str, cfg: PittaConfig, heldout=None, heldout_every: int = 100,
               heldout_mode: str = "eval", checkpoints=(), budget_ms: float | None = None,
               latency_source: str = "measured"):
    """Run one method over one schedule. Returns a dict of trace and diagnostics.

    ``model`` is copied, never mutated. With ``budget_ms`` each computed update
    is classified by its latency and applied under the delayed-update schedule.
    """
    model = model.copy()
    state = AdaptState.initial(model)
    trace = RunTrace()
    frozen_before = model.frozen_checksum()
    mon = None
    if heldout is not None:
        mon = RetentionMonitor(heldout, heldout_every, schedule.windows(), heldout_mode)
        hx, hy = mon.x, mon.y
    sil = []
    ck = sorted(set(checkpoints))
    scheduler = UpdateScheduler()
    decisions = dict.fromkeys(DECISIONS, 0)
    n_updates = 0
    timed = budget_ms is not None
    K = cfg.update_interval or 0
    for s, batch in enumerate(schedule.batches):
        if mon is not None:
            mon.observe(s, model)
            if s in ck:
                sil.append((f"T{ck.index(s)}", s, silhouette(embeddings(model, hx, heldout_mode), hy)))
        t0 = time.perf_counter()
        res = run_step(method, model, batch, state, cfg, apply_update=not timed)
        lat = (time.perf_counter() - t0) * 1e3
        decision = "no-update"
        if timed:
            hit = scheduler.due(s)
            if hit is not None:
                n_updates += _apply(model, hit[1], cfg.eta)
            if res.grads is not None:
                decision = time_constrained_classify(_latency_for(method, K, lat, latency_source), budget_ms)
                decisions[decision] += 1
                if decision == "safe":
                    n_updates += _apply(model, res.grads, cfg.eta)
                elif decision == "delayed":
                    scheduler.park(s, res.grads)
        elif res.updated:
            decision = "safe"
            decisions["safe"] += 1
            n_updates += 1
        state = res.state
        bd = res.breakdown
        trace.append(step=s, phase=schedule.phase_of(s),
                     online_acc=float(np.mean(res.predictions == batch.labels)),
                     entropy=res.mean_entropy, g_hat_norm=float(np.linalg.norm(state.g_hat)),
                     spectral_entropy=res.physics.spectral_entropy, w_t_mean=bd.w_t_mean,
                     lambda_grav_t=bd.lambda_grav_t, lambda_spec_t=bd.lambda_spec_t,
                     schedule_decision=decision, updated=decision == "safe" or bool(res.updated),
                     l_stat=bd.l_stat, l_grav=bd.l_grav, l_temp=bd.l_temp, l_spec=bd.l_spec,
                     total=bd.total)
    end = len(schedule.batches)
    retention = None
    if mon is not None:
        retention = mon.finish(end, model)
        if end in ck:
            sil.append((f"T{ck.index(end)}", end, silhouette(embeddings(model, hx, heldout_mode), hy)))
    return dict(trace=trace, retention=retention, silhouettes=sil, decisions=decisions,
                n_updates=n_updates, superseded=scheduler.superseded,
                frozen_identical=model.frozen_checksum() == frozen_before, model=model)


def _apply(model, grads, eta) -> int:
    return int(sgd_step(model, grads, eta))


def summarize(result: dict, bounds) -> dict:
    tr = result["trace"]
    acc = tr.column("online_acc")
    edges = list(bounds) + [len(tr)]
    seg = [float(np.mean(acc[a:b])) for a, b in zip(edges, edges[1:]) if b > a]
    se = tr.column("spectral_entropy")
    out = dict(online_acc=float(acc.mean()), segment_online_acc=seg, vr=violation_rate(tr),
               peak_g_hat_norm=float(tr.column("g_hat_norm").max()),
               mean_entropy=float(tr.column("entropy").mean()),
               end_spectral_entropy=float(se[edges[-2]:].mean()),
               scissor_spearman=scissor_correlation(tr), n_updates=result["n_updates"],
               decisions=result["decisions"], superseded=result["superseded"],
               frozen_identical=result["frozen_identical"])
    if result["retention"] is not None:
        curve = result["retention"]
        out.update(heldout_curve=[a for _, a in curve], heldout_initial=curve[0][1],
                   heldout_final=curve[-1][1])
    if result["silhouettes"]:
        out["silhouette"] = {name: v for name, _, v in result["silhouettes"]}
    return out


def run_id_for(cfg: ExperimentConfig, variant: str, method: str, seed: int, budget=None) -> str:
    rid = f"{cfg.name}.{variant}.{method}.s{seed}"
    if budget is not None:
        rid += f".b{budget:g}"
    return rid.replace("/", "-").replace(">", "")


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """All variants and methods for one seed. Returns picklable results."""
    sd = prepare_seed(cfg, seed)
    p = cfg.params
    runs = []
    for variant, sched, pcfg, bounds in build_schedules(cfg, sd):
        budgets = p.budgets_ms if cfg.protocol == "time-constrained" else (None,)
        for method in cfg.methods:
            for budget in budgets:
                t0 = time.perf_counter()
                res = run_stream(sd.model, sched, method, pcfg, sd.heldout, p.heldout_every, p.heldout_mode,
                                 bounds + (len(sched),), budget, p.latency_source)
                runs.append(dict(run_id=run_id_for(cfg, variant, method, seed, budget), variant=variant,
                                 method=method, seed=seed, budget_ms=budget,
                                 metrics=summarize(res, bounds), trace=res["trace"],
                                 retention=res["retention"], silhouettes=res["silhouettes"],
                                 wall_s=time.perf_counter() - t0))
    return dict(seed=seed, pretrain=asdict(sd.pretrain), runs=runs,
                cycled={str(k): v for k, v in sched.cycled.items()})


def _safe_run_seed(args):
    cfg, seed = args
    try:
        return run_seed(cfg, seed)
    except Exception as exc:  # recorded per seed; other seeds continue
        log.exception("seed %d failed", seed)
        return dict(seed=seed, error=f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# aggregation and report


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "std": std, "n": int(len(v))}


SCALAR_METRICS = ("online_acc", "vr", "peak_g_hat_norm", "mean_entropy", "end_spectral_entropy",
                  "scissor_spearman", "n_updates", "heldout_initial", "heldout_final")


def aggregate(runs: list) -> dict:
    groups = {}
    for r in runs:
        key = f"{r['variant']}|{r['method']}" + (f"|b{r['budget_ms']:g}" if r["budget_ms"] is not None else "")
        groups.setdefault(key, []).append(r["metrics"])
    out = {}
    for key, ms in sorted(groups.items()):
        agg = {m: _mean_std([x[m] for x in ms]) for m in SCALAR_METRICS if all(m in x for x in ms)}
        seg = np.array([x["segment_online_acc"] for x in ms])
        agg["segment_online_acc"] = [_mean_std(seg[:, i]) for i in range(seg.shape[1])]
        if all("heldout_curve" in x for x in ms):
            hc = np.array([x["heldout_curve"] for x in ms])
            agg["heldout_curve"] = [_mean_std(hc[:, i]) for i in range(hc.shape[1])]
        out[key] = agg
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_out_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get("PITTA_OUT")
    return Path(env) if env else Path(cfg.out_dir)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> dict:
    """Run every seed, write CSVs, report.json and MANIFEST. Returns the report."""
    cfg.validate()
    out = resolve_out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            seed_results = list(ex.map(_safe_run_seed, jobs))
    else:
        seed_results = [_safe_run_seed(j) for j in jobs]

    artifacts, runs, errors, per_seed = [], [], {}, []
    for sr in seed_results:
        if "error" in sr:
            errors[str(sr["seed"])] = sr["error"]
            continue
        per_seed.append(dict(seed=sr["seed"], pretrain=sr["pretrain"], cycled=sr["cycled"]))
        for r in sr["runs"]:
            artifacts += export_run(r["trace"], out, r["run_id"], r["retention"],
                                    r["silhouettes"] or None)
            runs.append(r)
    summary_rows = [(r["run_id"], r["variant"], r["method"], r["seed"],
                     "" if r["budget_ms"] is None else r["budget_ms"],
                     r["metrics"]["online_acc"], r["metrics"]["vr"], r["metrics"]["peak_g_hat_norm"],
                     r["metrics"].get("heldout_final", ""), r["metrics"]["n_updates"])
                    for r in runs]
    artifacts.append(write_csv(out / f"{cfg.name}.summary.csv",
                               ("run_id", "variant", "method", "seed", "budget_ms", "online_acc", "vr",
                                "peak_g_hat_norm", "heldout_final", "n_updates"), summary_rows))
    report = dict(
        schema_version=REPORT_SCHEMA_VERSION, package_version=__version__, name=cfg.name,
        protocol=cfg.protocol, config=config_to_dict(cfg), heldout_mode=cfg.params.heldout_mode,
        latency_source=cfg.params.latency_source if cfg.protocol == "time-constrained" else None,
        seeds=per_seed, errors=errors, partial=bool(errors),
        runs=[dict(run_id=r["run_id"], variant=r["variant"], method=r["method"], seed=r["seed"],
                   budget_ms=r["budget_ms"], metrics=r["metrics"]) for r in runs],
        aggregate=aggregate(runs) if runs else {},
        timing={r["run_id"]: round(r["wall_s"], 3) for r in runs},
    )
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True, default=float))
    artifacts.append(report_path)
    manifest = out / "MANIFEST"
    manifest.write_text("".join(f"{_sha256(p)}  {p.name}\n" for p in sorted(set(artifacts))))
    return report
