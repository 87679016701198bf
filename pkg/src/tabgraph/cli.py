"""Command-line entry point: gen, train, extract, score, experiment, report.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure. Logs go to stderr; only ``score`` prints to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from .core import RNG_ALGORITHM, BinaryAdjacency, SeededRng, WeightedAdjacency, load_dataset, save_dataset
from .errors import NUMERIC_ERRORS, TabGraphError
from .extract import adjacency_from_attention
from .harness import ExperimentConfig, aggregate_and_report, make_splits, read_results, run_experiment
from .metrics import r2, roc_auc
from .model import ModelConfig, load_attention, load_state, record_attention, save_attention, save_log, save_state, train

log = logging.getLogger("tabgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

GEN_DEFAULTS = {
    "mvn": {"p": 10, "p_edge": 0.267, "n": 10_000, "min_w": 0.1, "max_w": 1.0, "delta": 0.1},
    "scm": {"p": 10, "n_root": 3, "n_layers": 3, "p_edge": 0.5, "n": 10_000, "noise_sd": None, "clip": 3.0},
}
TRAIN_DEFAULTS = {"mode": "full", "level": "node", "layers": 3, "dim": 32, "heads": 4, "lr": 1e-3, "seed": 0,
                  "batch_size": 256, "max_epochs": 400, "patience": 10, "n_train": 1000, "fold": 0,
                  "split_seed": 0, "attention_rows": 500}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _merged(args, keys, defaults) -> dict:
    """Built-in defaults < JSON --config < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def cmd_gen(args) -> int:
    from .synth_mvn import make_mvn_dataset
    from .synth_scm import make_scm_dataset

    defaults = dict(GEN_DEFAULTS[args.type], seed=0)
    cfg = _merged(args, list(defaults), defaults)
    seed = cfg.pop("seed")
    cfg = {k: v for k, v in cfg.items() if k in GEN_DEFAULTS[args.type] and v is not None}
    ds = (make_mvn_dataset if args.type == "mvn" else make_scm_dataset)(seed, **cfg)
    csv_path, json_path = save_dataset(ds, args.out)
    log.info("wrote %s and %s (target column %d)", csv_path, json_path, ds.target_index)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _merged(args, list(TRAIN_DEFAULTS), TRAIN_DEFAULTS)
    ds = load_dataset(args.data)
    model_cfg = ModelConfig(n_layers=cfg["layers"], embed_dim=cfg["dim"], n_heads=cfg["heads"],
                            readout=cfg["level"], mask_mode=cfg["mode"], learning_rate=cfg["lr"],
                            seed=cfg["seed"], batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
                            patience=cfg["patience"])
    plans = make_splits(ds, cfg["n_train"], rng=SeededRng(cfg["split_seed"]))
    if not 0 <= cfg["fold"] < len(plans):
        raise ValueError(f"fold {cfg['fold']} out of range for {len(plans)} folds")
    split = plans[cfg["fold"]]
    state, history = train(ds, split, model_cfg)
    x, y = ds.xy(split.test)
    out = Path(args.out)
    save_state(state, out)
    save_log(history, out)
    save_attention(record_attention(x[:cfg["attention_rows"]], state), out)
    summary = {"test_r2": r2(state.predict(x), y), "epochs_run": state.epoch, "best_epoch": state.best_epoch,
               "data": str(args.data), "settings": cfg}
    (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("trained %d epochs, test R^2 %.4f", state.epoch, summary["test_r2"])
    return EXIT_OK


def cmd_extract(args) -> int:
    state = load_state(args.run)
    adj = adjacency_from_attention(load_attention(args.run), state.target_index, state.config.readout)
    doc = {"p": adj.p, "entries": adj.to_list(),
           "provenance": {"run": str(args.run), "readout": state.config.readout,
                          "mask_mode": state.config.mask_mode, "target_index": state.target_index}}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def _entries(path, *keys):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        return doc
    for k in keys:
        if k in doc:
            return doc[k]
    raise ValueError(f"{path}: no adjacency found (looked for {', '.join(keys)})")


def cmd_score(args) -> int:
    learned = WeightedAdjacency(np.array(_entries(args.adjacency, "entries"), dtype=float))
    truth = BinaryAdjacency(np.array(_entries(args.truth, "entries", "adjacency")))
    print(repr(roc_auc(learned, truth, directed=args.directed)))
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = {"trials": args.trials, "final_runs": args.final_runs, "max_folds": args.max_folds,
                 "master_seed": args.master_seed}
    cfg = ExperimentConfig.from_json(args.config, **overrides)
    rows = run_experiment(cfg, workers=args.workers, out_dir=args.out)
    failed = sum(1 for r in rows if r.error)
    log.info("%d rows written to %s (%d failed)", len(rows), Path(args.out) / "results.csv", failed)
    return EXIT_OK


def cmd_report(args) -> int:
    paths = aggregate_and_report(read_results(args.results), args.out, svg=not args.no_svg)
    for p in paths.values():
        log.info("wrote %s", p)
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="tabgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"tabgraph {__version__} (format {FORMAT_VERSION}, rng {RNG_ALGORITHM})")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset (CSV + JSON sidecar)")
    g.add_argument("--type", choices=["mvn", "scm"], required=True)
    g.add_argument("--config", help="JSON file with generator parameters")
    g.add_argument("--seed", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--p-edge", dest="p_edge", type=float)
    g.add_argument("--min-w", dest="min_w", type=float, help="mvn only")
    g.add_argument("--max-w", dest="max_w", type=float, help="mvn only")
    g.add_argument("--delta", type=float, help="mvn only")
    g.add_argument("--n-root", dest="n_root", type=int, help="scm only")
    g.add_argument("--n-layers", dest="n_layers", type=int, help="scm only")
    g.add_argument("--noise-sd", dest="noise_sd", type=float, help="scm only")
    g.add_argument("--clip", type=float, help="scm only")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one attention model and record its attention")
    t.add_argument("--data", required=True, help="dataset directory written by gen")
    t.add_argument("--config", help="JSON file with training settings")
    t.add_argument("--mode", choices=["full", "pruned"])
    t.add_argument("--level", choices=["node", "graph"])
    t.add_argument("--layers", type=int)
    t.add_argument("--dim", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--n-train", dest="n_train", type=int)
    t.add_argument("--fold", type=int)
    t.add_argument("--split-seed", dest="split_seed", type=int)
    t.add_argument("--attention-rows", dest="attention_rows", type=int,
                   help="test rows whose attention is recorded")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="turn a run's attention record into adjacency.json")
    e.add_argument("--run", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("score", help="print the ROC-AUC of a learned adjacency against a truth graph")
    s.add_argument("--adjacency", required=True)
    s.add_argument("--truth", required=True, help="JSON with 'entries' or a dataset sidecar")
    s.add_argument("--directed", action="store_true", help="score against the raw (unsymmetrized) truth")
    s.set_defaults(func=cmd_score)

    x = sub.add_parser("experiment", help="run or resume a full experiment")
    x.add_argument("--config", required=True)
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--trials", type=int)
    x.add_argument("--final-runs", dest="final_runs", type=int)
    x.add_argument("--max-folds", dest="max_folds", type=int)
    x.add_argument("--master-seed", dest="master_seed", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="aggregate results.csv into plot tables")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--no-svg", action="store_true")
    r.set_defaults(func=cmd_report)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (TabGraphError, ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
