"""Random graph generators: Bernoulli (Erdos-Renyi) undirected graphs for the
Gaussian pipeline and layered DAGs for the structural causal model pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryAdjacency, as_generator
from .errors import InvalidLayout

MIN_LAYER_SIZE = 3


def sample_er_graph(p: int, p_edge: float, rng) -> BinaryAdjacency:
    """Symmetric graph where each unordered pair is an edge with prob ``p_edge``."""
    if p < 2:
        raise ValueError("need at least two nodes")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError(f"p_edge must be a probability, got {p_edge}")
    gen = as_generator(rng)
    iu = np.triu_indices(p, k=1)
    draws = gen.random(len(iu[0])) < p_edge
    a = np.zeros((p, p), dtype=np.int8)
    a[iu] = draws
    return BinaryAdjacency(a | a.T)


@dataclass(frozen=True)
class LayeredDag:
    """Layered DAG. Node ids ``0..n_root-1`` are roots (layer 0); the ``p``
    child nodes follow, layer by layer. Edges only connect consecutive layers."""

    n_root: int
    layers: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def p(self) -> int:
        return sum(len(layer) for layer in self.layers[1:])

    @property
    def n_nodes(self) -> int:
        return self.n_root + self.p

    def parents(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(a for a, b in self.edges if b == node))

    def layer_of(self) -> dict[int, int]:
        return {v: i for i, layer in enumerate(self.layers) for v in layer}

    def topological_order(self) -> list[int]:
        return [v for layer in self.layers for v in layer]

    def children(self) -> list[int]:
        return [v for layer in self.layers[1:] for v in layer]


def layer_sizes(p: int, n_layers: int) -> list[int]:
    if n_layers < 1 or p < MIN_LAYER_SIZE * n_layers:
        raise InvalidLayout(
            f"cannot place {p} nodes in {n_layers} layers with at least {MIN_LAYER_SIZE} per layer"
        )
    base, extra = divmod(p, n_layers)
    return [base + 1 if i < extra else base for i in range(n_layers)]


def sample_layered_dag(
    p: int = 10, n_root: int = 3, n_layers: int = 3, p_edge: float = 0.5, rng=0
) -> LayeredDag:
    if n_root < 1:
        raise InvalidLayout("need at least one root node")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError(f"p_edge must be a probability, got {p_edge}")
    sizes = layer_sizes(p, n_layers)
    gen = as_generator(rng)

    layers = [tuple(range(n_root))]
    nxt = n_root
    for size in sizes:
        layers.append(tuple(range(nxt, nxt + size)))
        nxt += size

    edges = []
    for prev, layer in zip(layers[:-1], layers[1:]):
        for child in layer:
            keep = gen.random(len(prev)) < p_edge
            if not keep.any():
                # every child must depend on something
                keep[gen.integers(len(prev))] = True
            edges.extend((prev[i], child) for i in np.flatnonzero(keep))
    return LayeredDag(n_root, tuple(layers), tuple(edges))


def dag_to_adjacency(d: LayeredDag) -> BinaryAdjacency:
    """Directed adjacency over the child nodes only; root edges are dropped."""
    a = np.zeros((d.p, d.p), dtype=np.int8)
    for src, dst in d.edges:
        if src >= d.n_root:
            a[src - d.n_root, dst - d.n_root] = 1
    return BinaryAdjacency(a)
