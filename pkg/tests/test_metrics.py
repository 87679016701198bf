import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabgraph.core import BinaryAdjacency, WeightedAdjacency
from tabgraph.errors import UndefinedAUC, ZeroVariance
from tabgraph.metrics import normalized_r2, off_diagonal, r2, roc_auc


def brute_force_auc(w, truth):
    """Count every (edge, non-edge) pair over ordered off-diagonal entries."""
    t = np.maximum(truth, truth.T)
    pos, neg = [], []
    for j, k in itertools.permutations(range(len(w)), 2):
        (pos if t[j, k] else neg).append(w[j, k])
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _weighted(p, vals):
    w = np.zeros((p, p))
    w[~np.eye(p, dtype=bool)] = vals
    return w


def test_perfect_and_constant():
    t = BinaryAdjacency([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert roc_auc(WeightedAdjacency(t.entries.astype(float)), t) == 1.0
    assert roc_auc(WeightedAdjacency(_weighted(3, [0.3] * 6)), t) == 0.5


def test_hand_example():
    t = BinaryAdjacency([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    w = np.zeros((3, 3))
    w[0, 1], w[1, 0], w[0, 2], w[2, 0], w[1, 2], w[2, 1] = 0.9, 0.4, 0.5, 0.1, 0.4, 0.2
    # edge 0.9 beats all four non-edges; edge 0.4 loses to 0.5, ties 0.4, beats 0.1 and 0.2
    assert roc_auc(WeightedAdjacency(w), t) == (4 + 2.5) / 8
    assert brute_force_auc(w, t.entries) == (4 + 2.5) / 8


def test_undefined_auc():
    with pytest.raises(UndefinedAUC):
        roc_auc(np.zeros((3, 3)), BinaryAdjacency(np.zeros((3, 3), int)))
    with pytest.raises(UndefinedAUC):
        roc_auc(np.zeros((3, 3)), BinaryAdjacency(1 - np.eye(3, dtype=int)))


def test_directed_scoring():
    t = BinaryAdjacency([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    w = np.zeros((3, 3))
    w[0, 1] = 1.0
    assert roc_auc(w, t, directed=True) == 1.0
    assert roc_auc(w, t) == pytest.approx(0.75)


@st.composite
def instances(draw):
    p = draw(st.integers(2, 6))
    m = p * (p - 1)
    edges = draw(st.lists(st.integers(0, 1), min_size=m, max_size=m))
    # a coarse grid makes ties common
    vals = draw(st.lists(st.integers(0, 4), min_size=m, max_size=m))
    return p, _weighted(p, edges).astype(int), _weighted(p, np.array(vals) / 4)


@given(instances())
def test_matches_brute_force(inst):
    p, t, w = inst
    sym = np.maximum(t, t.T)
    off = off_diagonal(sym)
    if off.all() or not off.any():
        return
    assert roc_auc(WeightedAdjacency(w), BinaryAdjacency(t)) == brute_force_auc(w, t)


@given(instances())
def test_monotone_invariance_and_flip(inst):
    p, t, w = inst
    off = off_diagonal(np.maximum(t, t.T))
    if off.all() or not off.any():
        return
    truth = BinaryAdjacency(t)
    base = roc_auc(w, truth)
    assert roc_auc(np.sqrt(w), truth) == pytest.approx(base, abs=1e-12)
    flipped = _weighted(p, 1 - off_diagonal(w))
    assert roc_auc(flipped, truth) == pytest.approx(1 - base, abs=1e-12)


def test_r2_examples():
    y = np.array([0.0, 1.0, 2.0])
    assert r2(y, y) == 1.0
    assert r2(np.full(3, y.mean()), y) == 0.0
    assert r2(np.array([0.0, 1.0, 1.0]), y) == 0.5
    with pytest.raises(ZeroVariance):
        r2(np.zeros(3), np.ones(3))
    with pytest.raises(ZeroVariance):
        r2([1.0], [1.0])


def test_normalized_r2_examples():
    assert normalized_r2({"A": 0.2, "B": 0.8}) == {"A": 0.0, "B": 1.0}
    assert normalized_r2({"A": 0.5, "B": 0.5}) == {"A": 0.5, "B": 0.5}
    got = normalized_r2({"A": 0.2, "B": 0.5, "C": 0.8})
    assert got == pytest.approx({"A": 0.0, "B": 0.5, "C": 1.0})
    with pytest.raises(ValueError):
        normalized_r2({"A": 1.0})


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(-10, 10), min_size=2),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_normalized_r2_affine_argmax(scores, a, b):
    n1 = normalized_r2(scores)
    n2 = normalized_r2({k: a * v + b for k, v in scores.items()})
    assert max(n1, key=n1.get) in [k for k, v in n2.items() if v == max(n2.values())] or len(set(n2.values())) == 1
