"""Print per-dataset means from one or more results.csv files, plus the
pruned-minus-full R^2 gaps used by the pruning checks."""

import sys
from collections import defaultdict

import numpy as np

from tabgraph.harness import read_results


def main(paths):
    cells = defaultdict(lambda: {"r2": [], "roc": [], "epochs": []})
    for path in paths:
        for r in read_results(path):
            if r.error:
                print(f"error row: {r.dataset_id} {r.model_id} n={r.n_train}: {r.error}")
                continue
            c = cells[(r.dataset_id, r.n_train, r.model_id)]
            if r.test_r2 is not None:
                c["r2"].append(r.test_r2)
            if r.roc_auc is not None:
                c["roc"].append(r.roc_auc)
            if r.epochs_run is not None:
                c["epochs"].append(r.epochs_run)

    def m(xs):
        return f"{np.mean(xs):.4f}" if xs else "   -  "

    print(f"{'dataset':8} {'n':>5} {'variant':18} {'R2':>7} {'sd':>6} {'ROC':>7} {'epochs':>6}")
    for (ds, n, v), c in sorted(cells.items()):
        sd = f"{np.std(c['r2']):.4f}" if c["r2"] else "  -   "
        print(f"{ds:8} {n:5d} {v:18} {m(c['r2']):>7} {sd:>6} {m(c['roc']):>7} {m(c['epochs']):>6}")

    print("\npruned - full test R^2")
    for readout in ("node", "graph"):
        for (ds, n, v), c in sorted(cells.items()):
            if v != f"attn-full-{readout}":
                continue
            p = cells.get((ds, n, f"attn-pruned-{readout}"))
            if p and p["r2"] and c["r2"]:
                print(f"  {readout:5} {ds:6} n={n:5d}: {np.mean(p['r2']) - np.mean(c['r2']):+.4f}")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit("usage: summarize.py results.csv [results.csv ...]")
    main(sys.argv[1:])
