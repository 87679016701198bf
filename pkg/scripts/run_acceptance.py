"""Run (or resume) the three scaled-down experiments behind acceptance
criteria 2-4 and write a report next to each results file.

    python scripts/run_acceptance.py [--out runs/acceptance] [--workers 1]
"""

import argparse
import logging
from pathlib import Path

from tabgraph.harness import ExperimentConfig, aggregate_and_report, run_experiment

HERE = Path(__file__).resolve().parent
NAMES = ("pruning_n1000", "pruning_n4000", "structure_n2000")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(HERE.parent / "runs" / "acceptance"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", choices=NAMES, nargs="*")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.only or NAMES:
        cfg = ExperimentConfig.from_json(HERE / "configs" / f"{name}.json")
        out = Path(args.out) / name
        rows = run_experiment(cfg, workers=args.workers, out_dir=out)
        paths = aggregate_and_report(rows, out / "report")
        print(f"{name}: {len(rows)} rows -> {paths['aggregate']}")


if __name__ == "__main__":
    main()
