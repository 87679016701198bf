"""Shared numeric types: adjacency matrices, the dataset container, seeded RNG
streams, and the handful of SPD linear-algebra routines the generators need."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.linalg import cho_solve

from .errors import NotPositiveDefinite

RNG_ALGORITHM = "philox4x64"


@dataclass(frozen=True)
class Tolerances:
    spd_symmetry: float = 1e-10
    reconstruction: float = 1e-8
    stochastic_rows: float = 1e-6
    normalization: float = 1e-9


TOL = Tolerances()


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SeededRng:
    """A named, reproducible random stream.

    ``keys`` lets callers derive independent sub-streams (per fold, per run,
    ...) from one master seed without sharing generator state.
    """

    seed: int
    keys: tuple = ()
    algorithm: str = RNG_ALGORITHM

    def generator(self) -> np.random.Generator:
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported RNG algorithm {self.algorithm!r}")
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in self.keys]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *keys) -> "SeededRng":
        return SeededRng(self.seed, self.keys + tuple(keys), self.algorithm)


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    digest = hashlib.sha256(repr(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master: int, *keys) -> int:
    """Stable 63-bit seed derived from a master seed and arbitrary keys."""
    digest = hashlib.sha256(repr((int(master),) + tuple(keys)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return SeededRng(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


@dataclass(frozen=True)
class BinaryAdjacency:
    entries: np.ndarray

    def __post_init__(self):
        a = _frozen(self.entries, np.int8)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("binary adjacency entries must be 0 or 1")
        if np.diag(a).any():
            raise ValueError("self-interactions are not allowed (nonzero diagonal)")
        object.__setattr__(self, "entries", a)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool((self.entries == self.entries.T).all())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(j), int(k)) for j, k in zip(*np.nonzero(self.entries))]

    def to_list(self) -> list[list[int]]:
        return self.entries.astype(int).tolist()


@dataclass(frozen=True)
class WeightedAdjacency:
    entries: np.ndarray

    def __post_init__(self):
        a = _frozen(self.entries, np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.isfinite(a).all() or (a < 0).any() or (a > 1).any():
            raise ValueError("weighted adjacency entries must lie in [0, 1]")
        if np.diag(a).any():
            raise ValueError("weighted adjacency must have a zero diagonal")
        object.__setattr__(self, "entries", a)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def to_list(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    target_index: int
    truth: BinaryAdjacency
    generator_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = _frozen(self.values, np.float64)
        if v.ndim != 2:
            raise ValueError("dataset values must be a 2-d table")
        if not np.isfinite(v).all():
            raise ValueError("dataset contains non-finite values")
        if not 0 <= self.target_index < v.shape[1]:
            raise ValueError(f"target_index {self.target_index} out of range for p={v.shape[1]}")
        if self.truth.p != v.shape[1]:
            raise ValueError("truth adjacency size does not match the number of columns")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "target_index", int(self.target_index))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def feature_indices(self) -> list[int]:
        return [j for j in range(self.p) if j != self.target_index]

    def xy(self, rows=None) -> tuple[np.ndarray, np.ndarray]:
        v = self.values if rows is None else self.values[rows]
        return v[:, self.feature_indices], v[:, self.target_index]


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if np.abs(m - m.T).max(initial=0.0) > TOL.spd_symmetry:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def invert_spd(m) -> np.ndarray:
    L = cholesky(m)
    inv = cho_solve((L, True), np.eye(L.shape[0]))
    return (inv + inv.T) / 2


def symmetrize(a: BinaryAdjacency) -> BinaryAdjacency:
    e = a.entries
    return BinaryAdjacency(np.maximum(e, e.T))


# -- serialization ---------------------------------------------------------

def save_dataset(ds: Dataset, out_dir, stem: str = "dataset") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    header = ",".join(f"f{j}" for j in range(ds.p))
    np.savetxt(csv_path, ds.values, delimiter=",", header=header, comments="", fmt="%.17g")
    meta = ds.generator_meta
    sidecar: dict[str, Any] = {
        "p": ds.p,
        "n": ds.n,
        "target_index": ds.target_index,
        "seed": meta.get("seed"),
        "generator": meta.get("generator"),
        "adjacency": ds.truth.to_list(),
        "params": meta.get("params", {}),
        "rng": meta.get("rng", RNG_ALGORITHM),
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def load_dataset(path, stem: str = "dataset") -> Dataset:
    path = Path(path)
    if path.is_dir():
        csv_path, json_path = path / f"{stem}.csv", path / f"{stem}.json"
    else:
        csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    sidecar = json.loads(json_path.read_text())
    values = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if values.shape != (sidecar["n"], sidecar["p"]):
        raise ValueError(f"{csv_path}: shape {values.shape} disagrees with sidecar")
    meta = {k: sidecar[k] for k in ("seed", "generator", "params", "rng") if k in sidecar}
    return Dataset(values, sidecar["target_index"], BinaryAdjacency(sidecar["adjacency"]), meta)
