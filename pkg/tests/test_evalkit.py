import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyference.evalkit import (InvalidArgumentError, MetricsReport, average_precision_at_k, binarize,
                               chronological_split, map_hits_at_k, matrix_to_probs, precision_recall_f1,
                               prediction_events, rank_next_infections)
from dyference.graph import Cascade, DirectedEdge

E = DirectedEdge
edges = st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda t: t[0] != t[1]).map(
    lambda t: E(*t)), max_size=12)


def test_prf_examples():
    t = {E(0, 1), E(1, 2)}
    assert precision_recall_f1(t, t) == (1, 1, 1)
    assert precision_recall_f1({E(2, 0)}, t) == (0, 0, 0)
    pred = {E(0, 1), E(1, 2), E(3, 4), E(4, 5)}
    truth = {E(0, 1), E(1, 2), E(2, 3), E(5, 4)}
    assert precision_recall_f1(pred, truth) == (0.5, 0.5, 0.5)
    assert precision_recall_f1(set(), truth) == (0.0, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(edges, edges)
def test_f1_symmetric(a, b):
    pa, ra, fa = precision_recall_f1(a, b)
    pb, rb, fb = precision_recall_f1(b, a)
    assert fa == pytest.approx(fb) and pa == pytest.approx(rb) and ra == pytest.approx(pb)
    assert 0 <= fa <= 1


def test_binarize_modes():
    probs = {E(0, 1): 0.9, E(1, 2): 0.5, E(2, 0): 0.1}
    assert binarize(probs, "top-m", m=2) == {E(0, 1), E(1, 2)}
    assert binarize(probs, "threshold", threshold=1.0) == set()
    assert binarize(probs, "threshold", threshold=0.5) == {E(0, 1), E(1, 2)}
    assert binarize(probs, "best-f1", truth={E(0, 1)}) == {E(0, 1)}
    assert binarize(probs, "top-m", truth={E(0, 1), E(5, 6)}) == {E(0, 1), E(1, 2)}
    with pytest.raises(InvalidArgumentError):
        binarize(probs, "top-m")
    with pytest.raises(InvalidArgumentError):
        binarize(probs, "bogus")


def test_binarize_top_m_ties_and_size():
    probs = {E(2, 1): 0.5, E(0, 1): 0.5, E(1, 0): 0.5, E(3, 1): 0.0}
    assert binarize(probs, "top-m", m=2) == {E(0, 1), E(1, 0)}
    for m in range(6):
        assert len(binarize(probs, "top-m", m=m)) == min(m, 3)


def test_rank_next_infections():
    P = np.zeros((4, 4))
    P[0, 1], P[0, 2] = 0.9, 0.1
    order = rank_next_infections(P, [0])
    assert [v for v, _ in order][:2] == [1, 2]
    assert order[-1] == (3, 0.0)
    P = np.zeros((3, 3))
    P[0, 2] = P[1, 2] = 0.5
    assert dict(rank_next_infections(P, [0, 1]))[2] == pytest.approx(0.75)
    assert dict(rank_next_infections(P, [0, 1], score="max"))[2] == 0.5
    with pytest.raises(InvalidArgumentError):
        rank_next_infections(P, [])


def test_map_hits_examples():
    rankings = [[1, 2, 3], [4, 5, 6]]
    maps, hits = map_hits_at_k(rankings, [{1}, {4}], [1, 10])
    assert maps == {1: 1.0, 10: 1.0} and hits == {1: 1.0, 10: 1.0}
    maps, hits = map_hits_at_k([[1, 2, 3], [2, 3, 1]], [{3}, {1}], [2])
    assert hits[2] == 0.0
    maps, _ = map_hits_at_k([[7, 1], [1, 7]], [{7}, {7}], [10])
    assert maps[10] == pytest.approx(0.75)
    with pytest.raises(InvalidArgumentError):
        map_hits_at_k(rankings, [{1}, {4}], [0])


def test_hits_monotone_in_k():
    rng = np.random.default_rng(0)
    rankings = [rng.permutation(20).tolist() for _ in range(30)]
    rel = [{int(rng.integers(20))} for _ in range(30)]
    _, hits = map_hits_at_k(rankings, rel, list(range(1, 21)))
    vals = [hits[k] for k in range(1, 21)]
    assert vals == sorted(vals) and vals[-1] == 1.0


def test_average_precision_two_relevant():
    assert average_precision_at_k([1, 9, 2], {1, 2}, 3) == pytest.approx((1 + 2 / 3) / 2)


def test_prediction_events():
    c = Cascade("x", {0: 0.0, 1: 1.0, 2: 1.0, 3: 2.5})
    ev = list(prediction_events([c]))
    assert ev == [([0], {1, 2}, 0.0), ([0, 1, 2], {3}, 1.0)]
    assert list(prediction_events([c], after=2.0)) == [([0, 1, 2], {3}, 1.0)]
    assert chronological_split(0.0, 10.0) == 8.0


def test_report_rows_and_matrix_probs():
    rep = MetricsReport(1.0, 0.5, 0.25, 1 / 3, 4, 8, {10: 0.2}, {10: 0.4})
    rows = list(rep.rows())
    assert ("map" in [r[1] for r in rows]) and rows[-1] == (1.0, "hits", 10, 0.4)
    P = np.array([[0.3, 0.2], [0.0, 0.0]])
    assert matrix_to_probs(P) == {E(0, 1): 0.2}
