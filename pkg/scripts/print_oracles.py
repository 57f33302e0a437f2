"""Print every brute-force oracle value (the source of the frozen test literals)."""
from pitta.oracles import ORACLES, run_oracle

if __name__ == "__main__":
    for name in sorted(ORACLES):
        print(f"{name:24s} {run_oracle(name)!r}")
