"""Scoring inferred networks and next-infection rankings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .graph import Cascade, DirectedEdge

BINARIZE_MODES = ("top-m", "threshold", "best-f1")


class InvalidArgumentError(ValueError):
    pass


@dataclass
class MetricsReport:
    window_start: float
    precision: float
    recall: float
    f1: float
    n_predicted: int
    n_true: int
    map_at_k: Dict[int, float] = field(default_factory=dict)
    hits_at_k: Dict[int, float] = field(default_factory=dict)

    def rows(self):
        yield self.window_start, "precision", "", self.precision
        yield self.window_start, "recall", "", self.recall
        yield self.window_start, "f1", "", self.f1
        yield self.window_start, "n_predicted", "", float(self.n_predicted)
        yield self.window_start, "n_true", "", float(self.n_true)
        for k in sorted(self.map_at_k):
            yield self.window_start, "map", k, self.map_at_k[k]
        for k in sorted(self.hits_at_k):
            yield self.window_start, "hits", k, self.hits_at_k[k]


def precision_recall_f1(pred: Set[DirectedEdge], truth: Set[DirectedEdge]) -> Tuple[float, float, float]:
    tp = len(set(pred) & set(truth))
    p = tp / len(pred) if pred else 0.0
    r = tp / len(truth) if truth else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def _ordered(probs: Mapping[DirectedEdge, float]) -> List[Tuple[DirectedEdge, float]]:
    return sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))


def binarize(probs: Mapping[DirectedEdge, float], mode: str = "top-m",
             truth: Optional[Set[DirectedEdge]] = None, m: Optional[int] = None,
             threshold: Optional[float] = None) -> Set[DirectedEdge]:
    """Turn edge probabilities into an edge set.

    ``top-m`` keeps the ``m`` most probable non-zero edges (``m = |truth|``
    by default), ties broken by ``(src, dst)``. ``threshold`` keeps edges
    with probability ``>= threshold``. ``best-f1`` picks the threshold
    among the distinct probability values that maximizes F1 against truth.
    """
    if mode not in BINARIZE_MODES:
        raise InvalidArgumentError(f"unknown binarize mode {mode!r}")
    nonzero = [(e, p) for e, p in _ordered(probs) if p > 0]
    if mode == "top-m":
        if m is None:
            if truth is None:
                raise InvalidArgumentError("top-m needs m or the true edge set")
            m = len(truth)
        return {e for e, _ in nonzero[:m]}
    if mode == "threshold":
        if threshold is None:
            raise InvalidArgumentError("threshold mode needs a threshold")
        return {e for e, p in nonzero if p >= threshold}
    if truth is None:
        raise InvalidArgumentError("best-f1 needs the true edge set")
    best, best_f1 = set(), -1.0
    for theta in sorted({p for _, p in nonzero}, reverse=True):
        cand = {e for e, p in nonzero if p >= theta}
        f1 = precision_recall_f1(cand, truth)[2]
        if f1 > best_f1:
            best, best_f1 = cand, f1
    return best


def matrix_to_probs(P: np.ndarray) -> Dict[DirectedEdge, float]:
    n = P.shape[0]
    u, v = np.nonzero(P)
    return {DirectedEdge(int(a), int(b)): float(P[a, b]) for a, b in zip(u, v) if a != b and a < n}


def rank_next_infections(P: np.ndarray, infected: Sequence[int], candidates: Optional[Iterable[int]] = None,
                         score: str = "noisy-or") -> List[Tuple[int, float]]:
    """Rank uninfected nodes by how likely the infected set reaches them next.

    ``noisy-or``: ``1 - prod_u (1 - p(u -> v))``; ``max``: ``max_u p(u -> v)``.
    Ties go to the lower node index.
    """
    if not len(infected):
        raise InvalidArgumentError("need at least one infected node")
    inf = np.asarray(sorted(set(infected)), dtype=np.int64)
    n = P.shape[0]
    pool = np.setdiff1d(np.arange(n) if candidates is None else np.asarray(sorted(set(candidates))), inf)
    sub = np.clip(P[np.ix_(inf, pool)], 0.0, 1.0)
    if score == "noisy-or":
        s = 1.0 - np.prod(1.0 - sub, axis=0)
    elif score == "max":
        s = sub.max(axis=0)
    else:
        raise InvalidArgumentError(f"unknown score {score!r}")
    order = sorted(range(len(pool)), key=lambda i: (-s[i], pool[i]))
    return [(int(pool[i]), float(s[i])) for i in order]


def average_precision_at_k(ranking: Sequence[int], relevant: Set[int], k: int) -> float:
    hits, total = 0, 0.0
    for i, node in enumerate(ranking[:k], 1):
        if node in relevant:
            hits += 1
            total += hits / i
    denom = min(len(relevant), k)
    return total / denom if denom else 0.0


def map_hits_at_k(rankings: Sequence[Sequence[int]], relevant: Sequence[Set[int]],
                  ks: Sequence[int]) -> Tuple[Dict[int, float], Dict[int, float]]:
    """Mean truncated average precision and hit rate at each ``k``."""
    for k in ks:
        if k <= 0:
            raise InvalidArgumentError(f"k must be positive, got {k}")
    if len(rankings) != len(relevant):
        raise InvalidArgumentError("each ranking needs its realized next infections")
    maps, hits = {}, {}
    n = len(rankings)
    for k in ks:
        if n == 0:
            maps[k] = hits[k] = 0.0
            continue
        maps[k] = sum(average_precision_at_k(r, rel, k) for r, rel in zip(rankings, relevant)) / n
        hits[k] = sum(bool(set(r[:k]) & rel) for r, rel in zip(rankings, relevant)) / n
    return maps, hits


def prediction_events(cascades: Iterable[Cascade], after: float = float("-inf")):
    """``(infected prefix, next infected nodes, prefix time)`` events.

    One event per distinct infection time after the root; the next set holds
    every node sharing that time. Events whose next infection precedes
    ``after`` are skipped (for chronological train/test splits).
    """
    for c in cascades:
        order = c.ordered()
        times = sorted({t for _, t in order})
        for t_prev, t_next in zip(times, times[1:]):
            if t_next < after:
                continue
            prefix = [u for u, t in order if t <= t_prev]
            nxt = {u for u, t in order if t == t_next}
            yield prefix, nxt, t_prev


def chronological_split(t_min: float, t_max: float, train_share: float = 0.8) -> float:
    return t_min + train_share * (t_max - t_min)
