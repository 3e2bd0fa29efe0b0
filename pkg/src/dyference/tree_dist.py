"""Gibbs measure over a cascade's spanning trees and its determinantal kernel.

A cascade's candidate edges form a graph on its infected nodes. Spanning
trees ``T`` of that graph (directions ignored) get probability
``exp(-sum_{e in T} d_e / lam) / Z``. By the matrix-tree theorem ``Z`` is the
determinant of the weighted Laplacian grounded at one vertex, and the edge
indicators of a random tree form a determinantal point process whose
kernel is the transfer-current matrix ``K = W^1/2 A^T L^-1 A W^1/2``.

The grounded vertex is the cascade root (earliest infection), which is
adjacent to every other infected node, so the support graph is connected
whenever the cascade has at least two distinct infection times.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .graph import Cascade, DirectedEdge, candidate_edges

WEIGHT_FLOOR = 1e-12
BRUTE_FORCE_MAX_NODES = 8


class GraphDisconnectedError(ValueError):
    def __init__(self, components):
        self.components = components
        super().__init__(f"candidate graph is disconnected: {len(components)} components {components}")


class OrphanNodeError(ValueError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"node {node} has no candidate parent with positive probability")


class SizeLimitError(ValueError):
    pass


def _components(nodes: Sequence[int], edges: Sequence[DirectedEdge]) -> List[List[int]]:
    parent = {u: u for u in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    groups: Dict[int, List[int]] = {}
    for u in nodes:
        groups.setdefault(find(u), []).append(u)
    return sorted(sorted(g) for g in groups.values())


@dataclass(frozen=True)
class TreeDistribution:
    nodes: Tuple[int, ...]
    edges: Tuple[DirectedEdge, ...]
    d: np.ndarray
    temperature: float
    root: int

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        d = np.asarray(self.d, dtype=float)
        if d.shape != (len(self.edges),):
            raise ValueError("need exactly one weight per edge")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("edge weights must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        nodeset = set(self.nodes)
        if self.root not in nodeset:
            raise ValueError(f"root {self.root} is not an infected node")
        for e in self.edges:
            if e.src not in nodeset or e.dst not in nodeset:
                raise ValueError(f"edge {e} has an endpoint outside the node set")

    @classmethod
    def from_cascade(cls, c: Cascade, weights: Mapping[DirectedEdge, float],
                     temperature: float = 1.0) -> "TreeDistribution":
        edges, nodes = candidate_edges(c)
        d = np.array([weights[e] for e in edges], dtype=float)
        return cls(tuple(nodes), tuple(edges), d, temperature, nodes[0])

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def edge_weights(self) -> np.ndarray:
        """``exp(-d/lam)`` after shifting ``d`` so its minimum is zero.

        The shift rescales every tree by the same factor and therefore
        leaves the distribution unchanged; it only protects the solve.
        """
        if len(self.d) == 0:
            return np.zeros(0)
        w = np.exp(-(self.d - self.d.min()) / self.temperature)
        return np.maximum(w, WEIGHT_FLOOR)

    def check_connected(self) -> None:
        comps = _components(self.nodes, self.edges)
        if len(comps) > 1:
            raise GraphDisconnectedError(comps)


@dataclass(frozen=True)
class DppKernel:
    incidence: np.ndarray
    laplacian: np.ndarray
    kernel: np.ndarray
    edges: Tuple[DirectedEdge, ...]

    def index_of(self, e: DirectedEdge) -> int:
        try:
            return self.edges.index(e)
        except ValueError:
            raise ValueError(f"edge {e} is not a candidate edge") from None


def incidence_matrix(td: TreeDistribution) -> np.ndarray:
    """Signed node-edge incidence with the root row removed (+1 at src, -1 at dst)."""
    rows = {u: i for i, u in enumerate(u for u in td.nodes if u != td.root)}
    A = np.zeros((len(rows), len(td.edges)))
    for j, (u, v) in enumerate(td.edges):
        if u in rows:
            A[rows[u], j] = 1.0
        if v in rows:
            A[rows[v], j] = -1.0
    return A


def grounded_laplacian(td: TreeDistribution) -> np.ndarray:
    A = incidence_matrix(td)
    return (A * td.edge_weights()) @ A.T


def build_kernel(td: TreeDistribution) -> DppKernel:
    td.check_connected()
    A = incidence_matrix(td)
    w = td.edge_weights()
    L = (A * w) @ A.T
    # L^{-1/2} from the symmetric eigendecomposition
    evals, evecs = linalg.eigh(L)
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    H = inv_sqrt @ (A * np.sqrt(w))
    K = H.T @ H
    K = 0.5 * (K + K.T)
    for m in (A, L, K):
        m.setflags(write=False)
    return DppKernel(A, L, K, td.edges)


def marginal_array(td: TreeDistribution) -> np.ndarray:
    """Edge inclusion probabilities ``w_e (a_u - a_v)^T L^-1 (a_u - a_v)``."""
    td.check_connected()
    if not td.edges:
        return np.zeros(0)
    A = incidence_matrix(td)
    w = td.edge_weights()
    L = (A * w) @ A.T
    X = linalg.cho_solve(linalg.cho_factor(L), A)
    r_eff = np.einsum("ij,ij->j", A, X)
    return np.clip(w * r_eff, 0.0, 1.0)


def edge_marginals(td: TreeDistribution) -> Dict[DirectedEdge, float]:
    return dict(zip(td.edges, marginal_array(td).tolist()))


def _spanning_tree_check(tree: Sequence[DirectedEdge], td: TreeDistribution) -> List[int]:
    pos = {e: i for i, e in enumerate(td.edges)}
    idx = []
    for e in tree:
        if e not in pos:
            raise ValueError(f"edge {e} is not a candidate edge")
        idx.append(pos[e])
    if len(set(idx)) != td.n_nodes - 1 or len(idx) != len(set(idx)):
        raise ValueError(f"a spanning tree needs {td.n_nodes - 1} distinct edges, got {len(idx)}")
    if len(_components(td.nodes, tree)) != 1:
        raise ValueError("edge set is not a spanning tree (not connected)")
    return idx


def log_partition(td: TreeDistribution) -> float:
    """log Z for the shifted weights of :meth:`TreeDistribution.edge_weights`."""
    td.check_connected()
    if td.n_nodes == 1:
        return 0.0
    sign, logdet = np.linalg.slogdet(grounded_laplacian(td))
    return float(logdet)


def tree_log_probability(tree: Sequence[DirectedEdge], td: TreeDistribution) -> float:
    idx = _spanning_tree_check(tree, td)
    log_w = np.log(td.edge_weights())
    return float(log_w[idx].sum() - log_partition(td))


def subset_probability(r: Sequence[DirectedEdge], k: DppKernel) -> float:
    """Probability that a random tree contains all edges of ``r``: ``det K_R``."""
    idx = sorted({k.index_of(e) for e in r})
    if not idx:
        return 1.0
    sub = k.kernel[np.ix_(idx, idx)]
    return float(np.clip(np.linalg.det(sub), 0.0, 1.0))


def sample_observation_edges(td: TreeDistribution, q: int, rng: np.random.Generator,
                             marginals: Optional[np.ndarray] = None) -> List[DirectedEdge]:
    """Draw ``min(q, |E_c|)`` distinct edges, picked in proportion to their marginals."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    m = len(td.edges)
    if q >= m:
        return list(td.edges)
    p = marginal_array(td) if marginals is None else np.asarray(marginals, dtype=float)
    p = p / p.sum()
    picked = rng.choice(m, size=q, replace=False, p=p)
    return [td.edges[i] for i in picked]


def sample_dpp_tree(k: DppKernel, rng: np.random.Generator) -> List[DirectedEdge]:
    """Exact draw of a spanning tree from the projection kernel (spectral sampler)."""
    evals, evecs = linalg.eigh(k.kernel)
    V = evecs[:, evals > 0.5]
    picked = []
    while V.shape[1] > 0:
        p = np.sum(V ** 2, axis=1)
        p = np.maximum(p, 0.0)
        i = int(rng.choice(len(p), p=p / p.sum()))
        picked.append(i)
        j = int(np.argmax(np.abs(V[i])))
        Vj = V[:, j].copy()
        V = V - np.outer(Vj, V[i] / Vj[i])
        V = np.delete(V, j, axis=1)
        if V.shape[1]:
            V, _ = np.linalg.qr(V)
    return [k.edges[i] for i in picked]


def map_tree(c: Cascade, edge_prob: Mapping[DirectedEdge, float]) -> List[DirectedEdge]:
    """Greedy most probable diffusion tree: best earlier parent for every node.

    Ties go to the lowest source index.
    """
    order = c.ordered()
    root_time = order[0][1]
    tree = []
    for v, tv in order:
        if tv == root_time:
            continue
        best, best_p = None, 0.0
        for u, tu in order:
            if tu >= tv:
                break
            p = edge_prob.get(DirectedEdge(u, v), 0.0)
            if p > best_p or (p == best_p and p > 0 and best is not None and u < best):
                best, best_p = u, p
        if best is None:
            raise OrphanNodeError(v)
        tree.append(DirectedEdge(best, v))
    return tree


def enumerate_spanning_trees(td: TreeDistribution):
    """Yield index tuples of every spanning tree of the support graph."""
    if td.n_nodes > BRUTE_FORCE_MAX_NODES:
        raise SizeLimitError(f"enumeration limited to {BRUTE_FORCE_MAX_NODES} nodes, got {td.n_nodes}")
    nodes = list(td.nodes)
    for combo in itertools.combinations(range(len(td.edges)), td.n_nodes - 1):
        if len(_components(nodes, [td.edges[i] for i in combo])) == 1:
            yield combo


def brute_force_marginals(td: TreeDistribution) -> Dict[DirectedEdge, float]:
    """Exact marginals by summing Gibbs weights over all spanning trees."""
    trees = list(enumerate_spanning_trees(td))
    if not trees:
        raise GraphDisconnectedError(_components(td.nodes, td.edges))
    # unshifted, unfloored energies; shift by the minimum for stability
    energy = np.array([td.d[list(t)].sum() for t in trees]) / td.temperature
    w = np.exp(-(energy - energy.min()))
    w /= w.sum()
    marg = np.zeros(len(td.edges))
    for t, wt in zip(trees, w):
        marg[list(t)] += wt
    return dict(zip(td.edges, marg.tolist()))
