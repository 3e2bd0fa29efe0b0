"""Synthetic ground truth: static topologies, rate evolution, cascade simulation."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .graph import Cascade, CascadeSet, DirectedEdge, EmptyInputError, GroundTruthNetwork, NodeTable

PATTERN_KINDS = ("Slab", "Hump", "Square", "Chainsaw", "Constant")
TRANSMISSION_KINDS = ("Exponential", "Rayleigh", "PowerLaw")
RATE_RANGE = (0.01, 2.0)

CORE_PERIPHERY = ((0.9, 0.5), (0.5, 0.3))
HIERARCHICAL = ((0.9, 0.1), (0.1, 0.9))


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class KroneckerParams:
    seed: Tuple[Tuple[float, float], Tuple[float, float]]
    power: int
    target_edges: Optional[int] = None

    def __post_init__(self):
        m = np.asarray(self.seed, dtype=float)
        if m.shape != (2, 2) or np.any(m < 0) or np.any(m > 1):
            raise InvalidParamsError("seed must be a 2x2 matrix with entries in [0, 1]")
        if self.power < 1:
            raise InvalidParamsError("power must be >= 1")
        if self.target_edges is not None and self.target_edges < 1:
            raise InvalidParamsError("target edge count must be positive")


@dataclass(frozen=True)
class ForestFireParams:
    n_nodes: int
    forward: float = 0.2
    backward: float = 0.17

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidParamsError("need at least one node")
        for p in (self.forward, self.backward):
            if not 0 <= p < 1:
                raise InvalidParamsError("burning probabilities must lie in [0, 1)")


def kronecker_probabilities(p: KroneckerParams) -> np.ndarray:
    seed = np.asarray(p.seed, dtype=float)
    P = seed
    for _ in range(p.power - 1):
        P = np.kron(P, seed)
    return P


def kronecker_graph(p: KroneckerParams, rng: np.random.Generator) -> GroundTruthNetwork:
    """Stochastic Kronecker graph with one Bernoulli draw per ordered pair.

    With a target edge count the probability matrix is rescaled so the
    expected number of non-loop edges matches it.
    """
    P = kronecker_probabilities(p)
    np.fill_diagonal(P, 0.0)
    expected = P.sum()
    if p.target_edges is not None and expected > 0:
        P = P * (p.target_edges / expected)
        if P.max() > 1.0:
            raise InvalidParamsError(
                f"target of {p.target_edges} edges needs pair probabilities above 1 (max {P.max():.3f})")
    hits = rng.random(P.shape) < P
    np.fill_diagonal(hits, False)
    src, dst = np.nonzero(hits)
    edges = {DirectedEdge(int(u), int(v)): None for u, v in zip(src, dst)}
    return GroundTruthNetwork({None: edges}, n_nodes=P.shape[0])


def forest_fire(p: ForestFireParams, rng: np.random.Generator) -> GroundTruthNetwork:
    """Forest Fire growth: each arrival links to an ambassador and burns outward.

    From every burning node, a geometric number of not-yet-visited out-links
    (mean ``f / (1 - f)``) and in-links (mean ``b / (1 - b)``) catch fire.
    """
    out_nb: List[List[int]] = [[] for _ in range(p.n_nodes)]
    in_nb: List[List[int]] = [[] for _ in range(p.n_nodes)]
    edges: Dict[DirectedEdge, None] = {}
    for v in range(1, p.n_nodes):
        amb = int(rng.integers(v))
        visited = {v, amb}
        frontier = [amb]
        burned = [amb]
        while frontier:
            w = frontier.pop(0)
            n_fwd = int(rng.geometric(1.0 - p.forward)) - 1
            n_bwd = int(rng.geometric(1.0 - p.backward)) - 1
            for pool, count in ((out_nb[w], n_fwd), (in_nb[w], n_bwd)):
                cand = [x for x in pool if x not in visited]
                if not cand or count == 0:
                    continue
                pick = rng.permutation(len(cand))[:count]
                for i in sorted(pick.tolist()):
                    x = cand[i]
                    visited.add(x)
                    frontier.append(x)
                    burned.append(x)
        for x in burned:
            edges[DirectedEdge(v, x)] = None
            out_nb[v].append(x)
            in_nb[x].append(v)
    return GroundTruthNetwork({None: dict(sorted(edges.items()))}, n_nodes=p.n_nodes)


def planted_blocks(n_nodes: int, n_blocks: int, n_edges: int, within_share: float,
                   rng: np.random.Generator) -> GroundTruthNetwork:
    """Directed block network with exactly ``n_edges`` edges, ``within_share`` inside blocks."""
    block = np.arange(n_nodes) * n_blocks // n_nodes
    pairs = [(u, v) for u in range(n_nodes) for v in range(n_nodes) if u != v]
    inside = [e for e in pairs if block[e[0]] == block[e[1]]]
    across = [e for e in pairs if block[e[0]] != block[e[1]]]
    n_in = int(round(within_share * n_edges))
    chosen = [inside[i] for i in rng.choice(len(inside), n_in, replace=False)]
    chosen += [across[i] for i in rng.choice(len(across), n_edges - n_in, replace=False)]
    return GroundTruthNetwork({None: {DirectedEdge(u, v): None for u, v in sorted(chosen)}}, n_nodes=n_nodes)


@dataclass(frozen=True)
class RatePattern:
    """Rate trajectory shape of one edge over discrete steps.

    Slab: constant ``amplitude`` on ``[start, start + width)``, zero elsewhere.
    Hump: raised-cosine bump on the same kind of block.
    Square: ``amplitude`` for the first half of every period, zero otherwise.
    Chainsaw: linear ramp up to ``amplitude`` over each period, then reset.
    Constant: ``amplitude`` throughout.
    """

    kind: str
    amplitude: float
    start: int = 0
    width: int = 1
    period: int = 20
    phase: int = 0

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise InvalidParamsError(f"unknown pattern {self.kind!r}")
        if self.amplitude < 0:
            raise InvalidParamsError("amplitude must be non-negative")
        if self.width < 1 or self.period < 2:
            raise InvalidParamsError("width must be >= 1 and period >= 2")

    def rates(self, steps: int) -> np.ndarray:
        t = np.arange(steps)
        a = self.amplitude
        if self.kind == "Constant":
            return np.full(steps, a)
        if self.kind == "Slab":
            return np.where((t >= self.start) & (t < self.start + self.width), a, 0.0)
        if self.kind == "Hump":
            x = (t - self.start + 0.5) / self.width
            inside = (x > 0) & (x < 1)
            return np.where(inside, a * 0.5 * (1 - np.cos(2 * np.pi * x)), 0.0)
        pos = (t + self.phase) % self.period
        if self.kind == "Square":
            return np.where(pos < self.period // 2, a, 0.0)
        return a * (pos + 1) / self.period


def random_pattern(steps: int, rng: np.random.Generator, kind: Optional[str] = None,
                   rate_range: Tuple[float, float] = RATE_RANGE) -> RatePattern:
    kind = kind or PATTERN_KINDS[int(rng.integers(len(PATTERN_KINDS)))]
    amp = float(rng.uniform(*rate_range))
    width = max(1, steps // 5)
    start = int(rng.integers(0, max(1, steps - width + 1)))
    period = int(rng.integers(10, 31))
    phase = int(rng.integers(period))
    return RatePattern(kind, amp, start=start, width=width, period=period, phase=phase)


def evolve_rates(net: GroundTruthNetwork, steps: int, rng: np.random.Generator,
                 patterns: Optional[Mapping[DirectedEdge, RatePattern]] = None,
                 kinds: Sequence[str] = PATTERN_KINDS) -> Tuple[GroundTruthNetwork, Dict[DirectedEdge, RatePattern]]:
    """Give every edge a pattern (uniform over ``kinds`` unless supplied) and unroll it.

    Returns the dynamic network (edges present where their rate is positive)
    and the per-edge patterns.
    """
    if steps < 1:
        raise InvalidParamsError("steps must be >= 1")
    base = sorted(net.edges(None) if net.is_static else set().union(*(net.edges(w) for w in net.windows())))
    chosen: Dict[DirectedEdge, RatePattern] = {}
    for e in base:
        if patterns is not None and e in patterns:
            chosen[e] = patterns[e]
        else:
            kind = kinds[int(rng.integers(len(kinds)))]
            chosen[e] = random_pattern(steps, rng, kind)
    snaps: Dict[Optional[int], Dict[DirectedEdge, Optional[float]]] = {s: {} for s in range(steps)}
    for e, pat in chosen.items():
        for s, r in enumerate(pat.rates(steps).tolist()):
            if r > 0:
                snaps[s][e] = r
    return GroundTruthNetwork(snaps, n_nodes=net.n_nodes), chosen


@dataclass(frozen=True)
class TransmissionModel:
    """Delay law for one hop; ``rate`` per edge comes from the network.

    Exponential: ``a exp(-a t)``. Rayleigh: ``a t exp(-a t^2 / 2)``.
    PowerLaw: ``(k-1)/d0 (t/d0)^-k`` for ``t >= d0``, time-scaled by ``1/a``.
    """

    kind: str = "Exponential"
    exponent: float = 2.0
    min_delay: float = 0.01

    def __post_init__(self):
        if self.kind not in TRANSMISSION_KINDS:
            raise InvalidParamsError(f"unknown transmission model {self.kind!r}")
        if self.kind == "PowerLaw" and not (self.exponent > 1 and self.min_delay > 0):
            raise InvalidParamsError("power law needs exponent > 1 and min_delay > 0")

    def sample(self, rates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        rates = np.asarray(rates, dtype=float)
        if np.any(rates <= 0):
            raise InvalidParamsError("transmission rates must be positive")
        u = rng.random(rates.shape)
        if self.kind == "Exponential":
            return -np.log1p(-u) / rates
        if self.kind == "Rayleigh":
            return np.sqrt(-2.0 * np.log1p(-u) / rates)
        return self.min_delay * (1.0 - u) ** (-1.0 / (self.exponent - 1.0)) / rates


TRANSMISSION_ALIASES = {"exp": "Exponential", "ray": "Rayleigh", "pwl": "PowerLaw"}


def _adjacency(edges: Mapping[DirectedEdge, float], n_nodes: int):
    adj: List[List[Tuple[int, float]]] = [[] for _ in range(n_nodes)]
    for e in sorted(edges):
        adj[e.src].append((e.dst, edges[e]))
    return adj


def _one_cascade(adj, root: int, tm: TransmissionModel, horizon: float, rng: np.random.Generator) -> Dict[int, float]:
    times: Dict[int, float] = {}
    heap = [(0.0, root)]
    while heap:
        t, u = heapq.heappop(heap)
        if u in times:
            continue
        times[u] = t
        if not adj[u]:
            continue
        nbrs = [v for v, _ in adj[u]]
        delays = tm.sample(np.array([r for _, r in adj[u]]), rng)
        for v, dt in zip(nbrs, delays.tolist()):
            tv = t + dt
            if v not in times and tv <= horizon:
                heapq.heappush(heap, (tv, v))
    return times


def simulate_cascades(edges: Mapping[DirectedEdge, Optional[float]], n_nodes: int, tm: TransmissionModel,
                      count: int, horizon: float, rng: np.random.Generator, retries: int = 10,
                      offset: float = 0.0, id_prefix: str = "c", default_rate: float = 1.0) -> List[Cascade]:
    """Continuous-time independent cascades from uniformly chosen roots.

    Each cascade starts at time 0 at a root with at least one out-edge;
    every live edge draws one delay, and a node's time is its earliest
    arrival. Arrivals after ``horizon`` are dropped. A cascade that stays
    at the root alone is redrawn up to ``retries`` times. Times are shifted
    by ``offset`` when written out. Child streams keep cascades independent.
    """
    if count < 1 or not horizon > 0:
        raise InvalidParamsError("need count >= 1 and horizon > 0")
    live = {e: (default_rate if r is None else r) for e, r in edges.items()}
    if not live:
        raise EmptyInputError("network has no edges")
    adj = _adjacency(live, n_nodes)
    roots = np.array(sorted({e.src for e in live}))
    out = []
    for i, child in enumerate(rng.spawn(count)):
        for _ in range(retries + 1):
            root = int(roots[int(child.integers(len(roots)))])
            times = _one_cascade(adj, root, tm, horizon, child)
            if len(times) >= 2:
                break
        out.append(Cascade(f"{id_prefix}{i}", {u: offset + t for u, t in times.items()}))
    return out


def simulate_dynamic(net: GroundTruthNetwork, tm: TransmissionModel, per_step: int, horizon: float,
                     rng: np.random.Generator, steps: Optional[Sequence[int]] = None,
                     step_length: float = 1.0, retries: int = 10) -> CascadeSet:
    """``per_step`` cascades at every step, using that step's live rates, rooted at the step start."""
    n = net.n_nodes or 1 + max(max(e) for w in net.windows() for e in net.edges(w))
    windows = [w for w in net.windows() if w is not None] if not net.is_static else [None]
    if steps is None:
        steps = windows if windows != [None] else [0]
    cascades: List[Cascade] = []
    for s, child in zip(steps, rng.spawn(len(steps))):
        live = net.snapshots.get(s, net.snapshots.get(None, {}))
        if not live:
            continue
        cascades += simulate_cascades(live, n, tm, per_step, horizon, child, retries=retries,
                                      offset=s * step_length, id_prefix=f"s{s}_c")
    return CascadeSet(tuple(cascades), NodeTable.of_size(n))
