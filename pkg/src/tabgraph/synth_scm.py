"""Structural causal model data on a layered DAG.

Roots are standard normal. Each child applies one of nine fixed nonlinear maps
to its parents, the result is standardized over the generated block, Gaussian
noise is added and the value is clipped. Roots are dropped from the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Dataset, SeededRng, as_generator
from .errors import ArityMismatch, DegenerateColumn
from .graphs import LayeredDag, dag_to_adjacency, sample_layered_dag

MAX_ARITY = 3
DEFAULT_NOISE_SD = math.sqrt(0.5)  # N(0, 0.5) read as variance 0.5

MAP_TABLE: dict[int, list[tuple[str, Callable]]] = {
    1: [
        ("x1^2/3", lambda x1: x1**2 / 3),
        ("0.5*x1^2+3*x1", lambda x1: 0.5 * x1**2 + 3 * x1),
        ("-|x1|+4*x1", lambda x1: -np.abs(x1) + 4 * x1),
    ],
    2: [
        ("(x1*x2+x1^2)/2", lambda x1, x2: (x1 * x2 + x1**2) / 2),
        ("x1^2+x2^2-x1*x2", lambda x1, x2: x1**2 + x2**2 - x1 * x2),
        ("-(x1+x2)^2+x1*x2", lambda x1, x2: -((x1 + x2) ** 2) + x1 * x2),
    ],
    3: [
        ("(x1*x2+x3^2)/3", lambda x1, x2, x3: (x1 * x2 + x3**2) / 3),
        ("-x1^2+x2*x3+x3", lambda x1, x2, x3: -(x1**2) + x2 * x3 + x3),
        ("(x1+x2+x3)+x1*x3", lambda x1, x2, x3: (x1 + x2 + x3) + x1 * x3),
    ],
}


@dataclass(frozen=True)
class ComputationalMap:
    arity: int
    map_id: int
    parents: tuple[int, ...] = ()

    def __post_init__(self):
        if self.arity not in MAP_TABLE or not 0 <= self.map_id < len(MAP_TABLE[self.arity]):
            raise ValueError(f"no map {self.map_id} of arity {self.arity}")
        if self.parents and len(self.parents) != self.arity:
            raise ArityMismatch(f"{len(self.parents)} parents for an arity-{self.arity} map")

    @property
    def formula(self) -> str:
        return MAP_TABLE[self.arity][self.map_id][0]


def eval_map(m: ComputationalMap, parent_values):
    """Evaluate the map; works on scalars or on equal-length sample columns."""
    if len(parent_values) != m.arity:
        raise ArityMismatch(f"map {m.formula} takes {m.arity} inputs, got {len(parent_values)}")
    return MAP_TABLE[m.arity][m.map_id][1](*parent_values)


def assign_maps(d: LayeredDag, rng) -> tuple[LayeredDag, dict[int, ComputationalMap]]:
    """Pick a random map per child, first capping in-degree at three.

    Returns the DAG with dropped parent edges removed, plus the map per child.
    """
    gen = as_generator(rng)
    maps = {}
    edges = []
    for child in d.children():
        parents = d.parents(child)
        if len(parents) > MAX_ARITY:
            keep = gen.choice(len(parents), size=MAX_ARITY, replace=False)
            parents = tuple(parents[i] for i in sorted(keep))
        arity = len(parents)
        maps[child] = ComputationalMap(arity, int(gen.integers(len(MAP_TABLE[arity]))), parents)
        edges.extend((par, child) for par in parents)
    pruned = LayeredDag(d.n_root, d.layers, tuple(sorted(edges, key=lambda e: (e[1], e[0]))))
    return pruned, maps


def simulate_scm(
    d: LayeredDag,
    maps: dict[int, ComputationalMap],
    n: int,
    rng,
    noise_sd: float = DEFAULT_NOISE_SD,
    clip: float = 3.0,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Per-node output columns and the standardized pre-noise columns."""
    if n < 2:
        raise ValueError("need at least two samples to standardize")
    gen = as_generator(rng)
    cols = {r: gen.standard_normal(n) for r in d.layers[0]}
    noise = gen.standard_normal((d.p, n)) * noise_sd
    prenoise = {}
    for i, child in enumerate(d.children()):
        m = maps[child]
        h = np.asarray(eval_map(m, [cols[par] for par in m.parents]), dtype=np.float64)
        sd = h.std()
        if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, np.abs(h).max()):
            raise DegenerateColumn(f"node {child} ({m.formula}) has zero variance before noise")
        z = (h - h.mean()) / sd
        prenoise[child] = z
        cols[child] = np.clip(z + noise[i], -clip, clip)
    return cols, prenoise


def generate_scm(
    d: LayeredDag,
    maps: dict[int, ComputationalMap],
    n: int,
    noise_sd: float = DEFAULT_NOISE_SD,
    clip: float = 3.0,
    rng=0,
    target_index: int | None = None,
) -> Dataset:
    gen = as_generator(rng)
    cols, _ = simulate_scm(d, maps, n, gen, noise_sd, clip)
    values = np.column_stack([cols[c] for c in d.children()])
    if target_index is None:
        target_index = int(gen.integers(d.p))
    return Dataset(values, target_index, dag_to_adjacency(d), {"generator": "scm"})


def make_scm_dataset(
    seed: int,
    p: int = 10,
    n_root: int = 3,
    n_layers: int = 3,
    p_edge: float = 0.5,
    n: int = 10_000,
    noise_sd: float = DEFAULT_NOISE_SD,
    clip: float = 3.0,
) -> Dataset:
    root = SeededRng(seed)
    dag = sample_layered_dag(p, n_root, n_layers, p_edge, root.child("dag"))
    for attempt in range(2):
        pruned, maps = assign_maps(dag, root.child("maps", attempt))
        try:
            ds = generate_scm(pruned, maps, n, noise_sd, clip, root.child("samples"))
            break
        except DegenerateColumn:
            if attempt == 1:
                raise
    params = {
        "p": p,
        "n_root": n_root,
        "n_layers": n_layers,
        "p_edge": p_edge,
        "n": n,
        "noise_sd": noise_sd,
        "clip": clip,
        "maps": {str(c - n_root): m.formula for c, m in maps.items()},
        "layers": [list(layer) for layer in pruned.layers],
        "edges": [list(e) for e in pruned.edges],
    }
    meta = {"generator": "scm", "seed": seed, "params": params, "rng": root.algorithm}
    return Dataset(ds.values, ds.target_index, ds.truth, meta)
