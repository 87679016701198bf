"""Structure-recovery and predictive scores."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .core import BinaryAdjacency, WeightedAdjacency, symmetrize
from .errors import UndefinedAUC, ZeroVariance


def off_diagonal(m: np.ndarray) -> np.ndarray:
    """Off-diagonal entries in row-major order (all ordered pairs j != k)."""
    m = np.asarray(m)
    return m[~np.eye(m.shape[0], dtype=bool)]


def auc_from_scores(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties, via midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("need at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_auc(learned, truth: BinaryAdjacency, directed: bool = False) -> float:
    """Probability that a true edge outscores a true non-edge (ties count half).

    Scored over all ordered off-diagonal pairs. The truth is symmetrized
    unless ``directed`` is set, so a DAG edge counts in both directions.
    """
    w = learned.entries if isinstance(learned, WeightedAdjacency) else np.asarray(learned, float)
    if w.shape != truth.entries.shape:
        raise ValueError(f"shape mismatch: learned {w.shape} vs truth {truth.entries.shape}")
    t = truth if directed else symmetrize(truth)
    try:
        return auc_from_scores(off_diagonal(w), off_diagonal(t.entries))
    except UndefinedAUC:
        raise UndefinedAUC("truth graph is all edges or all non-edges") from None


def r2(y_pred, y_true) -> float:
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_true.size < 2:
        raise ZeroVariance("R^2 needs at least two targets")
    ss_tot = ((y_true - y_true.mean()) ** 2).sum()
    if ss_tot == 0:
        raise ZeroVariance("target has zero variance")
    return float(1.0 - ((y_true - y_pred) ** 2).sum() / ss_tot)


def normalized_r2(scores: dict) -> dict:
    """Min-max rescale scores so the worst model maps to 0 and the best to 1."""
    if len(scores) < 2:
        raise ValueError("normalization needs at least two models")
    lo, hi = min(scores.values()), max(scores.values())
    if hi == lo:
        return {k: 0.5 for k in scores}
    return {k: (v - lo) / (hi - lo) for k, v in scores.items()}
