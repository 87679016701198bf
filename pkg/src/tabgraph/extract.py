"""Turn recorded attention into a weighted adjacency estimate, plus the
partial-correlation baseline estimator."""

from __future__ import annotations

import numpy as np

from .core import Dataset, WeightedAdjacency, invert_spd


def average_attention(rec) -> np.ndarray:
    """Mean over samples, layers and heads of a (N, L, H, t, t) tensor."""
    a = np.asarray(getattr(rec, "tensor", rec), dtype=np.float64)
    if a.ndim != 5 or a.shape[0] == 0:
        raise ValueError(f"expected a nonempty (N, L, H, t, t) record, got shape {a.shape}")
    return a.mean(axis=(0, 1, 2))


def denormalize(avg) -> WeightedAdjacency:
    """Zero the diagonal, then divide each row by its maximum.

    Rows left with no off-diagonal mass stay zero.
    """
    a = np.array(avg, dtype=np.float64)
    if (a < 0).any():
        raise ValueError("attention weights must be nonnegative")
    np.fill_diagonal(a, 0.0)
    row_max = a.max(axis=1, keepdims=True)
    out = np.divide(a, row_max, out=np.zeros_like(a), where=row_max > 0)
    return WeightedAdjacency(np.clip(out, 0.0, 1.0))


def pad_target(a: WeightedAdjacency, target_index: int) -> WeightedAdjacency:
    """Insert a zero row and column for the target feature."""
    e = np.insert(a.entries, target_index, 0.0, axis=0)
    return WeightedAdjacency(np.insert(e, target_index, 0.0, axis=1))


def reorder_node_level(m: np.ndarray, target_index: int) -> np.ndarray:
    """Map a node-level token matrix (features in column order, target token
    last) back to dataset column order."""
    p = m.shape[0]
    features = [j for j in range(p) if j != target_index]
    token_of = np.empty(p, dtype=int)
    token_of[features] = np.arange(p - 1)
    token_of[target_index] = p - 1
    return m[np.ix_(token_of, token_of)]


def adjacency_from_attention(rec, target_index: int, readout: str) -> WeightedAdjacency:
    """Full extraction pipeline returning a p x p adjacency in column order."""
    adj = denormalize(average_attention(rec))
    if readout == "node":
        return WeightedAdjacency(reorder_node_level(adj.entries, target_index))
    if readout == "graph":
        return pad_target(adj, target_index)
    raise ValueError(f"unknown readout {readout!r}")


def partial_correlation_adjacency(ds: Dataset, ridge: float = 1e-3, rows=None) -> WeightedAdjacency:
    """Absolute partial correlations from a ridge-regularized precision
    estimate, row-max rescaled like an attention map."""
    x = ds.values if rows is None else ds.values[rows]
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need more samples than columns (n={n}, p={p})")
    # ridge on the correlation matrix keeps the estimate invariant to column scaling
    s = np.corrcoef(x, rowvar=False)
    lam = ridge * np.trace(s) / p
    k = invert_spd(s + lam * np.eye(p))
    d = np.sqrt(np.diag(k))
    pcor = np.abs(-k / np.outer(d, d))
    return denormalize(pcor)
