"""Run every experiment config and write CSVs (plus summaries) to an output directory.

    python scripts/run_experiments.py [--out results] [--workers 4] [--only rate_known ...]
"""
import argparse
import sys
from pathlib import Path

from regime.cli import main as regime

CONFIGS = Path(__file__).resolve().parent / "configs"

RUNS = {
    "rate_known": ("rate_known.cfg", []),
    "design_regime": ("design_efficiency.cfg", []),
    "design_uniform": ("design_efficiency.cfg", ["algo.design=uniform"]),
    "unknown_transitions": ("unknown_transitions.cfg", []),
    "action": ("action.cfg", []),
    "linear": ("linear.cfg", []),
}


def run(out: Path, workers: int, only: list[str]) -> int:
    status = 0
    for name, (cfg, extra) in RUNS.items():
        if only and name not in only:
            continue
        args = ["sweep", "--config", str(CONFIGS / cfg), "--output", str(out / f"{name}.csv"),
                "--set", f"sweep.workers={workers}"]
        for kv in extra:
            args += ["--set", kv]
        print(f"== {name}", file=sys.stderr, flush=True)
        status = max(status, regime(args))
    audit = regime(["audit", "--output", str(out / "audits.txt")])
    return max(status, audit)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results")
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--only", nargs="*", default=[])
    args = parser.parse_args()
    sys.exit(run(Path(args.out), args.workers, args.only))
