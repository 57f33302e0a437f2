"""Low-entropy trap: per-seed held-out decay and violation rates.

    python3 scripts/trap_report.py [--config configs/low_entropy_trap.toml] [--seeds 0 1]
"""
import argparse
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from pitta.runner import load_config, run_experiment

DEFAULT = Path(__file__).resolve().parent.parent / "configs" / "low_entropy_trap.toml"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=DEFAULT)
    ap.add_argument("--seeds", type=int, nargs="*", default=None)
    ap.add_argument("--out-dir", type=Path, default=None)
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    out = args.out_dir or Path(tempfile.mkdtemp(prefix="trap-"))
    report = run_experiment(cfg, out)
    rows = {}
    for r in report["runs"]:
        rows.setdefault(r["seed"], {})[r["method"]] = r["metrics"]
    print(f"{'seed':>4}  {'method':12s} {'held T0':>8} {'held T3':>8} {'VR':>7} {'online':>7}")
    for seed in sorted(rows):
        for method, m in rows[seed].items():
            print(f"{seed:>4}  {method:12s} {m['heldout_curve'][0]:8.3f} {m['heldout_final']:8.3f} "
                  f"{m['vr']:7.3f} {m['online_acc']:7.3f}")
    tent = [rows[s]["tent"] for s in rows if "tent" in rows[s]]
    pitta = [rows[s]["pitta"] for s in rows if "pitta" in rows[s]]
    if tent and pitta:
        print(f"mean tent held-out {np.mean([m['heldout_curve'][0] for m in tent]):.3f} -> "
              f"{np.mean([m['heldout_final'] for m in tent]):.3f}; "
              f"VR tent {np.mean([m['vr'] for m in tent]):.3f} vs pitta {np.mean([m['vr'] for m in pitta]):.3f}")
    print(f"outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
