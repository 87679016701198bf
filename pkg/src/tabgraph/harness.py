"""Experiment engine: splits, random-search tuning, repeated runs, result
persistence and aggregation into plot-ready tables."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import Dataset, SeededRng, as_generator, derive_seed
from .errors import InsufficientSamples, NonFiniteLoss
from .extract import adjacency_from_attention, partial_correlation_adjacency
from .metrics import normalized_r2, r2, roc_auc
from .model import ModelConfig, record_attention, train
from .synth_mvn import make_mvn_dataset
from .synth_scm import make_scm_dataset

log = logging.getLogger(__name__)

FOLDS_BY_NTRAIN = {1000: 4, 2000: 3, 3000: 2, 4000: 1}
N_VAL_HPARAM = 2500
N_TEST = 2500
EARLYSTOP_FRACTION = 0.25

VARIANTS = {
    "attn-full-node": ("full", "node"),
    "attn-pruned-node": ("pruned", "node"),
    "attn-full-graph": ("full", "graph"),
    "attn-pruned-graph": ("pruned", "graph"),
    "pgm": ("", ""),
}


# -- splits ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    val_earlystop: np.ndarray
    val_hparam: np.ndarray
    test: np.ndarray
    fold: int = 0

    def sets(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "val_earlystop": self.val_earlystop,
                "val_hparam": self.val_hparam, "test": self.test}

    def is_disjoint(self) -> bool:
        allidx = np.concatenate(list(self.sets().values()))
        return len(np.unique(allidx)) == len(allidx)


def n_earlystop(n_train: int) -> int:
    return int(math.floor(EARLYSTOP_FRACTION * n_train))


def fold_count(n_train: int) -> int:
    try:
        return FOLDS_BY_NTRAIN[n_train]
    except KeyError:
        raise ValueError(f"no fold count defined for n_train={n_train}") from None


def make_splits(ds: Dataset, n_train: int, folds: int | None = None, rng=0) -> list[SplitPlan]:
    """Fixed hyperparameter-validation and test sets, with train and
    early-stop sets resampled per fold from the remaining pool."""
    n_es = n_earlystop(n_train)
    need = n_train + n_es + N_VAL_HPARAM + N_TEST
    if ds.n < need:
        raise InsufficientSamples(f"n_train={n_train} needs {need} rows, dataset has {ds.n}")
    folds = fold_count(n_train) if folds is None else folds
    gen = as_generator(rng)
    perm = gen.permutation(ds.n)
    test = np.sort(perm[:N_TEST])
    val_hp = np.sort(perm[N_TEST:N_TEST + N_VAL_HPARAM])
    pool = perm[N_TEST + N_VAL_HPARAM:]
    plans = []
    for fold in range(folds):
        pick = gen.choice(len(pool), size=n_train + n_es, replace=False)
        chosen = pool[pick]
        plans.append(SplitPlan(np.sort(chosen[:n_train]), np.sort(chosen[n_train:]), val_hp, test, fold))
    return plans


# -- tuning ------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    layers: tuple[int, int] = (1, 4)
    dims: tuple[int, ...] = (8, 16, 32, 64)
    lr: tuple[float, float] = (1e-5, 1e-3)

    def sample(self, gen: np.random.Generator, base: ModelConfig) -> ModelConfig:
        n_layers = int(gen.integers(self.layers[0], self.layers[1] + 1))
        dim = int(self.dims[gen.integers(len(self.dims))])
        lo, hi = np.log(self.lr[0]), np.log(self.lr[1])
        lr = float(np.exp(gen.uniform(lo, hi)))
        return base.with_(n_layers=n_layers, embed_dim=dim, learning_rate=lr)


DEFAULT_TRIAL = dict(n_layers=3, embed_dim=32, learning_rate=1e-3)


def validation_mse(ds: Dataset, split: SplitPlan, cfg: ModelConfig) -> float:
    try:
        state, _ = train(ds, split, cfg)
    except NonFiniteLoss:
        return math.inf
    x, y = ds.xy(split.val_hparam)
    return float(np.mean((state.predict(x) - y) ** 2))


def evaluate_candidates(ds: Dataset, split: SplitPlan, candidates: list[ModelConfig]) -> list[tuple[ModelConfig, float]]:
    return [(c, validation_mse(ds, split, c)) for c in candidates]


def tune(
    ds: Dataset,
    split0: SplitPlan,
    space: SearchSpace | None = None,
    trials: int = 15,
    rng=0,
    base: ModelConfig | None = None,
) -> ModelConfig:
    """Random search; trial one is the default configuration. The winner
    minimizes MSE on the hyperparameter-validation set."""
    if trials == 1:
        return (base or ModelConfig()).with_(**DEFAULT_TRIAL)
    return search(ds, split0, space, trials, rng, base)[0]


def search(ds, split0, space=None, trials=15, rng=0, base=None):
    """Like :func:`tune` but also returns every ``(config, val_mse)`` trial."""
    if trials < 1:
        raise ValueError("need at least one trial")
    space = space or SearchSpace()
    base = base or ModelConfig()
    gen = as_generator(rng)
    candidates = [base.with_(**DEFAULT_TRIAL)]
    candidates += [space.sample(gen, base) for _ in range(trials - 1)]
    scored = evaluate_candidates(ds, split0, candidates)
    best = min(range(len(scored)), key=lambda i: (scored[i][1], i))
    return scored[best][0], scored


# -- experiment --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    type: str
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def dataset_id(self) -> str:
        return f"{self.type}{self.seed}"

    def build(self) -> Dataset:
        if self.type == "mvn":
            return make_mvn_dataset(self.seed, **self.params)
        if self.type == "scm":
            return make_scm_dataset(self.seed, **self.params)
        raise ValueError(f"unknown dataset type {self.type!r}")


@dataclass
class ExperimentConfig:
    datasets: list
    n_train: list = field(default_factory=lambda: [1000, 2000, 3000, 4000])
    variants: list = field(default_factory=lambda: list(VARIANTS))
    trials: int = 15
    final_runs: int = 3
    max_folds: int | None = None
    model: dict = field(default_factory=dict)
    space: dict = field(default_factory=dict)
    attention_rows: int | None = None
    master_seed: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        self.datasets = [d if isinstance(d, DatasetSpec) else DatasetSpec(**d) for d in self.datasets]
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")
        for n in self.n_train:
            fold_count(n)

    def folds_for(self, n_train: int) -> int:
        f = fold_count(n_train)
        return f if self.max_folds is None else min(f, self.max_folds)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = [asdict(s) for s in self.datasets]
        return d


@dataclass
class ResultRow:
    dataset_id: str
    dataset_type: str
    model_id: str
    mask_mode: str
    readout_level: str
    n_train: int
    fold: int
    seed: int
    test_r2: float | None
    roc_auc: float | None
    epochs_run: int | None
    wall_time: float
    error: str = ""
    run_key: str = ""


RESULT_FIELDS = [f.name for f in fields(ResultRow)]
METRIC_FIELDS = ["test_r2", "roc_auc", "epochs_run"]


def run_key(dataset_id, variant, n_train, fold, seed, config) -> str:
    blob = json.dumps([dataset_id, variant, n_train, fold, seed, config], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunJob:
    spec: DatasetSpec
    variant: str
    n_train: int
    fold: int
    seed: int
    config: dict
    attention_rows: int | None
    split_seed: int
    n_folds: int

    @property
    def key(self) -> str:
        return run_key(self.spec.dataset_id, self.variant, self.n_train, self.fold, self.seed, self.config)


_DATASET_CACHE: dict = {}


def _dataset(spec: DatasetSpec) -> Dataset:
    k = (spec.type, spec.seed, json.dumps(spec.params, sort_keys=True))
    if k not in _DATASET_CACHE:
        _DATASET_CACHE[k] = spec.build()
    return _DATASET_CACHE[k]


def _splits(spec, n_train, n_folds, split_seed):
    return make_splits(_dataset(spec), n_train, n_folds, SeededRng(split_seed))


def execute_run(job: RunJob) -> ResultRow:
    """One training/evaluation run; failures become tagged rows."""
    mask_mode, readout = VARIANTS[job.variant]
    row = ResultRow(job.spec.dataset_id, job.spec.type, job.variant, mask_mode, readout,
                    job.n_train, job.fold, job.seed, None, None, None, 0.0, "", job.key)
    t0 = time.perf_counter()
    try:
        ds = _dataset(job.spec)
        split = _splits(job.spec, job.n_train, job.n_folds, job.split_seed)[job.fold]
        if job.variant == "pgm":
            row.roc_auc = roc_auc(partial_correlation_adjacency(ds, rows=split.train), ds.truth)
        else:
            if "error" in job.config:
                raise RuntimeError(job.config["error"])
            cfg = ModelConfig(**job.config).with_(seed=job.seed)
            state, _ = train(ds, split, cfg)
            x, y = ds.xy(split.test)
            row.test_r2 = r2(state.predict(x), y)
            rows = x if job.attention_rows is None else x[:job.attention_rows]
            rec = record_attention(rows, state)
            row.roc_auc = roc_auc(adjacency_from_attention(rec, ds.target_index, readout), ds.truth)
            row.epochs_run = state.epoch
    except Exception as exc:  # recorded, the experiment continues
        log.warning("run %s failed: %s", job.key, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time = time.perf_counter() - t0
    return row


def execute_tuning(spec: DatasetSpec, variant: str, n_train: int, base: dict, space: dict,
                   trials: int, tune_seed: int, split_seed: int, n_folds: int) -> dict:
    """Tuned config as a dict, or ``{"error": ...}`` so the runs that depend on
    it are recorded as failures instead of aborting the experiment."""
    mask_mode, readout = VARIANTS[variant]
    try:
        ds = _dataset(spec)
        split0 = _splits(spec, n_train, n_folds, split_seed)[0]
        base_cfg = ModelConfig(**base).with_(mask_mode=mask_mode, readout=readout, seed=tune_seed)
        space_obj = SearchSpace(**{k: tuple(v) for k, v in space.items()})
        best = tune(ds, split0, space_obj, trials, SeededRng(tune_seed), base_cfg)
    except Exception as exc:
        log.warning("tuning %s %s n_train=%d failed: %s", spec.dataset_id, variant, n_train, exc)
        return {"error": f"tuning failed: {type(exc).__name__}: {exc}"}
    return asdict(best)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(rows, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([_format(getattr(r, k)) for k in RESULT_FIELDS])


def _parse(name, value):
    if value == "":
        return None if name in ("test_r2", "roc_auc", "epochs_run") else ""
    if name in ("n_train", "fold", "seed", "epochs_run"):
        return int(value)
    if name in ("test_r2", "roc_auc", "wall_time"):
        return float(value)
    return value


def read_results(path) -> list[ResultRow]:
    with Path(path).open(newline="") as fh:
        return [ResultRow(**{k: _parse(k, v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def _sort_key(r: ResultRow):
    return (r.dataset_id, list(VARIANTS).index(r.model_id), r.n_train, r.fold, r.seed)


def _map(fn, jobs, workers):
    if workers <= 1:
        for job in jobs:
            yield job, fn(*job) if isinstance(job, tuple) else fn(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = {pool.submit(fn, *job) if isinstance(job, tuple) else pool.submit(fn, job): job for job in jobs}
        for fut in as_completed(futs):
            yield futs[fut], fut.result()


def run_experiment(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> list[ResultRow]:
    """Run (or resume) a full experiment and return the sorted result rows.

    Tuned configurations are cached in ``tuning.json``; finished runs are
    appended to ``results.csv`` as they complete and skipped on rerun. The file
    is rewritten in canonical order at the end.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    results_path = out / "results.csv"
    tuning_path = out / "tuning.json"

    done: dict[str, ResultRow] = {}
    if results_path.exists():
        done = {r.run_key: r for r in read_results(results_path) if not r.error}
    tuned: dict = json.loads(tuning_path.read_text()) if tuning_path.exists() else {}

    base = dict(cfg.model)
    attn_variants = [v for v in cfg.variants if v != "pgm"]

    def split_seed(spec, n_train):
        return derive_seed(cfg.master_seed, spec.dataset_id, n_train, "splits")

    tune_jobs = []
    for spec in cfg.datasets:
        for n_train in cfg.n_train:
            for variant in attn_variants:
                key = f"{spec.dataset_id}|{variant}|{n_train}"
                if key not in tuned:
                    tune_seed = derive_seed(cfg.master_seed, spec.dataset_id, variant, n_train, "tune")
                    tune_jobs.append((spec, variant, n_train, base, cfg.space, cfg.trials, tune_seed,
                                      split_seed(spec, n_train), cfg.folds_for(n_train)))
    for job, best in _map(execute_tuning, tune_jobs, workers):
        tuned[f"{job[0].dataset_id}|{job[1]}|{job[2]}"] = best
        ok = {k: v for k, v in tuned.items() if "error" not in v}
        tuning_path.write_text(json.dumps(ok, indent=2, sort_keys=True) + "\n")
        log.info("tuned %s %s n_train=%d: %s", job[0].dataset_id, job[1], job[2], best)

    run_jobs = []
    for spec in cfg.datasets:
        for n_train in cfg.n_train:
            n_folds = cfg.folds_for(n_train)
            for variant in cfg.variants:
                config = {} if variant == "pgm" else tuned[f"{spec.dataset_id}|{variant}|{n_train}"]
                runs = 1 if variant == "pgm" else cfg.final_runs
                for fold in range(n_folds):
                    for r in range(runs):
                        seed = 0 if variant == "pgm" else derive_seed(
                            cfg.master_seed, spec.dataset_id, variant, n_train, fold, r)
                        job = RunJob(spec, variant, n_train, fold, seed, config, cfg.attention_rows,
                                     split_seed(spec, n_train), n_folds)
                        if job.key not in done:
                            run_jobs.append(job)

    write_header = not results_path.exists()
    with results_path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if write_header:
            w.writerow(RESULT_FIELDS)
        for i, (job, row) in enumerate(_map(execute_run, run_jobs, workers), 1):
            w.writerow([_format(getattr(row, k)) for k in RESULT_FIELDS])
            fh.flush()
            if not row.error:
                done[row.run_key] = row
            log.info("[%d/%d] %s %s n=%d fold=%d r2=%s roc=%s", i, len(run_jobs), row.dataset_id,
                     row.model_id, row.n_train, row.fold, row.test_r2, row.roc_auc)
            if row.error:
                done.setdefault("error:" + row.run_key, row)

    rows = sorted(done.values(), key=_sort_key)
    write_results(rows, results_path)
    return rows


# -- aggregation -------------------------------------------------------------

def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std()) if len(a) > 1 else 0.0


def aggregate(results: list[ResultRow]) -> list[dict]:
    """Per dataset type x variant x n_train: mean and std over datasets of the
    per-dataset means of ROC-AUC, test R^2 and normalized R^2.

    Normalization is per dataset across all (variant, n_train) cells that have
    an R^2.
    """
    if not results:
        raise ValueError("no results to aggregate")
    cells: dict = {}
    for r in results:
        if r.error:
            continue
        c = cells.setdefault((r.dataset_id, r.dataset_type, r.model_id, r.n_train), {"r2": [], "roc": []})
        if r.test_r2 is not None:
            c["r2"].append(r.test_r2)
        if r.roc_auc is not None:
            c["roc"].append(r.roc_auc)
    per_ds = {k: {"r2": float(np.mean(v["r2"])) if v["r2"] else None,
                  "roc": float(np.mean(v["roc"])) if v["roc"] else None} for k, v in cells.items()}

    for ds_id in {k[0] for k in per_ds}:
        keys = [k for k in per_ds if k[0] == ds_id and per_ds[k]["r2"] is not None]
        if len(keys) >= 2:
            norm = normalized_r2({k: per_ds[k]["r2"] for k in keys})
        else:
            norm = {k: 1.0 for k in keys}
        for k in keys:
            per_ds[k]["r2_norm"] = norm[k]

    groups: dict = {}
    for (ds_id, ds_type, variant, n_train), v in per_ds.items():
        groups.setdefault((ds_type, variant, n_train), []).append(v)
    out = []
    for (ds_type, variant, n_train), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], list(VARIANTS).index(kv[0][1]), kv[0][2])):
        rec = {"dataset_type": ds_type, "model_id": variant, "n_train": n_train, "n_datasets": len(vals)}
        for name, src in (("roc_auc", "roc"), ("test_r2", "r2"), ("r2_norm", "r2_norm")):
            xs = [v[src] for v in vals if v.get(src) is not None]
            m, s = _mean_std(xs) if xs else (None, None)
            rec[f"{name}_mean"], rec[f"{name}_std"] = m, s
        out.append(rec)
    return out


def _write_table(records, columns, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            w.writerow([_format(rec[c]) for c in columns])


def aggregate_and_report(results, out_dir, svg: bool = True) -> dict[str, Path]:
    """Write aggregate.csv plus the per-figure tables (and SVG charts)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(results)
    paths = {"aggregate": out / "aggregate.csv", "roc": out / "roc_by_variant.csv",
             "r2": out / "r2_vs_ntrain.csv"}
    cols = list(agg[0].keys())
    _write_table(agg, cols, paths["aggregate"])
    # pruned graphs score 1 by construction, so they stay out of the structure figure
    roc_rows = [r for r in agg if r["roc_auc_mean"] is not None and "pruned" not in r["model_id"]]
    _write_table(roc_rows, ["dataset_type", "model_id", "n_train", "roc_auc_mean", "roc_auc_std"], paths["roc"])
    r2_rows = [r for r in agg if r["r2_norm_mean"] is not None]
    _write_table(r2_rows, ["dataset_type", "model_id", "n_train", "r2_norm_mean", "r2_norm_std",
                           "test_r2_mean", "test_r2_std"], paths["r2"])
    if svg:
        paths.update(_plot(roc_rows, r2_rows, out))
    return paths


def _plot(roc_rows, r2_rows, out: Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    types = sorted({r["dataset_type"] for r in r2_rows + roc_rows})
    if r2_rows:
        fig, axes = plt.subplots(1, len(types), figsize=(5 * len(types), 3.5), squeeze=False)
        for ax, t in zip(axes[0], types):
            for variant in VARIANTS:
                pts = sorted((r["n_train"], r["r2_norm_mean"], r["r2_norm_std"]) for r in r2_rows
                             if r["dataset_type"] == t and r["model_id"] == variant)
                if pts:
                    xs, ys, es = zip(*pts)
                    ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=variant)
            ax.set_title(t.upper())
            ax.set_xlabel("n_train")
            ax.set_ylabel("normalized R2")
        axes[0][0].legend(fontsize=7)
        fig.tight_layout()
        paths["r2_svg"] = out / "r2_vs_ntrain.svg"
        fig.savefig(paths["r2_svg"])
        plt.close(fig)
    if roc_rows:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        labels = [f"{r['dataset_type']}\n{r['model_id']}\nn={r['n_train']}" for r in roc_rows]
        ax.bar(range(len(roc_rows)), [r["roc_auc_mean"] for r in roc_rows],
               yerr=[r["roc_auc_std"] for r in roc_rows], capsize=3)
        ax.axhline(0.5, color="grey", linestyle="--", linewidth=1)
        ax.set_xticks(range(len(roc_rows)))
        ax.set_xticklabels(labels, fontsize=5)
        ax.set_ylabel("ROC-AUC")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        paths["roc_svg"] = out / "roc_by_variant.svg"
        fig.savefig(paths["roc_svg"])
        plt.close(fig)
    return paths
