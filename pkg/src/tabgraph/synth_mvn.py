"""Gaussian graphical model data: sparse precision matrix on a graph, then
samples from the implied zero-mean multivariate normal.

The precision matrix is built by a diagonally dominant construction rather
than drawn from a G-Wishart: off-diagonal weights are random-signed
``Uniform[min_w, max_w]`` on the graph's edges, and each diagonal entry is the
row's absolute off-diagonal sum plus ``delta``. Gershgorin then gives
positive definiteness with smallest eigenvalue at least ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryAdjacency, Dataset, SeededRng, as_generator, cholesky, invert_spd
from .graphs import sample_er_graph


@dataclass(frozen=True)
class PrecisionMatrix:
    entries: np.ndarray
    graph: BinaryAdjacency

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def covariance(self) -> np.ndarray:
        return invert_spd(self.entries)


def sample_precision(
    g: BinaryAdjacency, rng, min_w: float = 0.1, max_w: float = 1.0, delta: float = 0.1
) -> PrecisionMatrix:
    if not g.is_symmetric:
        raise ValueError("precision graph must be undirected (symmetric)")
    if not 0 < min_w <= max_w:
        raise ValueError("need 0 < min_w <= max_w")
    gen = as_generator(rng)
    p = g.p
    iu = np.triu_indices(p, k=1)
    mags = gen.uniform(min_w, max_w, size=len(iu[0]))
    signs = np.where(gen.random(len(iu[0])) < 0.5, -1.0, 1.0)
    k = np.zeros((p, p))
    k[iu] = np.where(g.entries[iu] == 1, signs * mags, 0.0)
    k = k + k.T
    k[np.diag_indices(p)] = np.abs(k).sum(axis=1) + delta
    k.setflags(write=False)
    return PrecisionMatrix(k, g)


def sample_mvn(k: PrecisionMatrix, n: int, rng, target_index: int | None = None) -> Dataset:
    if n < 1:
        raise ValueError("need at least one sample")
    gen = as_generator(rng)
    L = cholesky(invert_spd(k.entries))
    z = gen.standard_normal((n, k.p))
    if target_index is None:
        target_index = int(gen.integers(k.p))
    return Dataset(z @ L.T, target_index, k.graph, {"generator": "mvn"})


def make_mvn_dataset(
    seed: int,
    p: int = 10,
    p_edge: float = 0.267,
    n: int = 10_000,
    min_w: float = 0.1,
    max_w: float = 1.0,
    delta: float = 0.1,
) -> Dataset:
    """Graph, precision and samples from one seed (independent sub-streams)."""
    root = SeededRng(seed)
    g = sample_er_graph(p, p_edge, root.child("graph"))
    k = sample_precision(g, root.child("precision"), min_w, max_w, delta)
    ds = sample_mvn(k, n, root.child("samples"))
    params = {"p": p, "p_edge": p_edge, "n": n, "min_w": min_w, "max_w": max_w, "delta": delta}
    meta = {"generator": "mvn", "seed": seed, "params": params, "rng": root.algorithm}
    return Dataset(ds.values, ds.target_index, ds.truth, meta)
