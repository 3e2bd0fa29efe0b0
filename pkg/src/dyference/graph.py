"""Cascade and network data model.

Nodes are dense integer indices ``0..N-1`` backed by a :class:`NodeTable`
that optionally carries text labels. An uninfected node is simply absent
from a cascade's infection map; there is no infinity sentinel.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

log = logging.getLogger(__name__)


class EmptyInputError(ValueError):
    """Raised when an operation needs data and received none."""


class DirectedEdge(NamedTuple):
    src: int
    dst: int


def edge(src: int, dst: int) -> DirectedEdge:
    if src == dst:
        raise ValueError(f"self-loop {src}->{dst} is not a valid edge")
    return DirectedEdge(int(src), int(dst))


class NodeTable:
    """Dense index <-> label mapping.

    Labels default to the decimal string of the index.
    """

    def __init__(self, labels: Iterable[Optional[str]] = ()):
        self._labels: List[str] = []
        self._index: Dict[str, int] = {}
        for lab in labels:
            self.add(lab)

    @classmethod
    def of_size(cls, n: int) -> "NodeTable":
        return cls(str(i) for i in range(n))

    def add(self, label: Optional[str] = None) -> int:
        idx = len(self._labels)
        label = str(idx) if label is None else str(label)
        if label in self._index:
            raise ValueError(f"duplicate node label {label!r}")
        self._labels.append(label)
        self._index[label] = idx
        return idx

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def index(self, label: str) -> int:
        return self._index[label]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, idx: object) -> bool:
        return isinstance(idx, int) and 0 <= idx < len(self._labels)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, NodeTable) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"NodeTable(n={len(self)})"


@dataclass(frozen=True)
class Cascade:
    """Infection times of one contagion. Absent nodes were never infected."""

    id: str
    infections: Mapping[int, float]

    def __post_init__(self):
        times = {}
        for node, t in self.infections.items():
            t = float(t)
            if not (t >= 0.0 and t != float("inf")):
                raise ValueError(f"cascade {self.id}: invalid time {t!r} for node {node}")
            times[int(node)] = t
        object.__setattr__(self, "infections", MappingProxyType(times))

    def __len__(self) -> int:
        return len(self.infections)

    def ordered(self) -> List[Tuple[int, float]]:
        """Infected nodes sorted by (time, index)."""
        return sorted(self.infections.items(), key=lambda kv: (kv[1], kv[0]))

    def root(self) -> int:
        return self.ordered()[0][0]


@dataclass(frozen=True)
class CascadeSet:
    cascades: Tuple[Cascade, ...]
    node_table: NodeTable

    def __post_init__(self):
        object.__setattr__(self, "cascades", tuple(self.cascades))
        n = len(self.node_table)
        for c in self.cascades:
            for node in c.infections:
                if not 0 <= node < n:
                    raise ValueError(f"cascade {c.id} references unknown node {node}")

    def __len__(self) -> int:
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    def max_time(self) -> float:
        times = [t for c in self.cascades for t in c.infections.values()]
        if not times:
            raise EmptyInputError("cascade set has no infections")
        return max(times)


@dataclass
class GroundTruthNetwork:
    """Edge sets per window. ``None`` is the key of a static network."""

    snapshots: Dict[Optional[int], Dict[DirectedEdge, Optional[float]]] = field(default_factory=dict)
    n_nodes: Optional[int] = None

    def __post_init__(self):
        for edges in self.snapshots.values():
            for e, rate in edges.items():
                if rate is not None and not rate > 0:
                    raise ValueError(f"edge {e} has non-positive rate {rate}")

    @property
    def is_static(self) -> bool:
        return list(self.snapshots) == [None]

    def edges(self, window: Optional[int] = None) -> Set[DirectedEdge]:
        if window not in self.snapshots and None in self.snapshots:
            window = None
        return set(self.snapshots.get(window, {}))

    def windows(self) -> List[Optional[int]]:
        return sorted(self.snapshots, key=lambda w: -1 if w is None else w)


def candidate_edges(c: Cascade) -> Tuple[List[DirectedEdge], List[int]]:
    """All pairs (u, v) with u infected strictly before v, plus the infected nodes."""
    order = c.ordered()
    nodes = [u for u, _ in order]
    edges = []
    for i, (u, tu) in enumerate(order):
        for v, tv in order[i + 1:]:
            if tu < tv:
                edges.append(DirectedEdge(u, v))
    return edges, nodes


def window_slice(cs: CascadeSet, start: float, width: float) -> CascadeSet:
    """Restrict every cascade to infections in ``[start, start + width)``."""
    if not width > 0:
        raise ValueError(f"window width must be positive, got {width}")
    end = start + width
    out = []
    for c in cs.cascades:
        kept = {u: t for u, t in c.infections.items() if start <= t < end}
        if kept:
            out.append(Cascade(c.id, kept))
    return CascadeSet(tuple(out), cs.node_table)


def initial_weights(cs: CascadeSet) -> Dict[DirectedEdge, float]:
    """Accumulated infection delays per candidate edge, rescaled to mean 1."""
    raw: Dict[DirectedEdge, float] = defaultdict(float)
    for c in cs.cascades:
        edges, _ = candidate_edges(c)
        if not edges:
            continue
        times = c.infections
        for e in edges:
            raw[e] += times[e.dst] - times[e.src]
    if not raw:
        raise EmptyInputError("no candidate edges in any cascade")
    mean = sum(raw.values()) / len(raw)
    return {e: w / mean for e, w in sorted(raw.items())}


def usable_cascades(cs: CascadeSet, warn: bool = False) -> List[int]:
    """Indices of cascades with at least two distinct infection times."""
    keep = [i for i, c in enumerate(cs.cascades) if len(set(c.infections.values())) >= 2]
    if warn and len(keep) < len(cs.cascades):
        skipped = [c.id for i, c in enumerate(cs.cascades) if i not in set(keep)]
        log.warning("skipping %d cascade(s) with fewer than 2 distinct infection times: %s%s",
                    len(skipped), ", ".join(skipped[:5]), ", ..." if len(skipped) > 5 else "")
    return keep


def node_set(edges: Sequence[DirectedEdge]) -> Set[int]:
    return {u for e in edges for u in e}
