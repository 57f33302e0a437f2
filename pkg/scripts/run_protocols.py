"""Run one or more experiment configs and print their aggregate lines.

    python3 scripts/run_protocols.py configs/long_sequence.toml configs/lr_grid.toml
    python3 scripts/run_protocols.py --all --out-dir runs
"""
import argparse
import sys
from pathlib import Path

from pitta.runner import ConfigError, load_config, run_experiment

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--all", action="store_true", help="every config in configs/ except smoke")
    ap.add_argument("--out-dir", type=Path, default=None, help="parent directory for run outputs")
    args = ap.parse_args(argv)
    paths = list(args.configs)
    if args.all:
        paths += sorted(p for p in CONFIG_DIR.glob("*.toml") if p.stem != "smoke")
    if not paths:
        ap.error("give config paths or --all")
    status = 0
    for path in paths:
        try:
            cfg = load_config(path)
        except ConfigError as exc:
            print(f"{path}: config error: {exc}", file=sys.stderr)
            status = 1
            continue
        out = None if args.out_dir is None else args.out_dir / cfg.name
        report = run_experiment(cfg, out)
        status = max(status, 2 if report["partial"] else 0)
        print(f"== {cfg.name} ({cfg.protocol}, seeds {list(cfg.seeds)})")
        for key, agg in report["aggregate"].items():
            print(f"  {key:28s} acc {agg['online_acc']['mean']:.3f}+-{agg['online_acc']['std']:.3f}"
                  f"  VR {agg['vr']['mean']:.3f}+-{agg['vr']['std']:.3f}")
    return status


if __name__ == "__main__":
    sys.exit(main())
