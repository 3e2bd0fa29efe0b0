"""Observation extraction, the collapsed Gibbs update, and windowed online inference."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import mdnd
from .graph import (Cascade, CascadeSet, DirectedEdge, EmptyInputError, candidate_edges,
                    initial_weights, usable_cascades, window_slice)
from .mdnd import Hyperparams, MdndState
from .tree_dist import (TreeDistribution, build_kernel, map_tree, marginal_array,
                        sample_dpp_tree, sample_observation_edges)

log = logging.getLogger(__name__)

OBS_MODES = ("dpp-marginal", "map-tree")
MAX_WEIGHT = 27.6  # -log(1e-12)
PROB_FLOOR = 1e-12


class InvalidConfigError(ValueError):
    pass


@dataclass
class InferenceConfig:
    window: float = 1.0
    q: Optional[int] = None
    q_ratio: Optional[float] = None
    temperature: float = 1.0
    outer_iterations: int = 10
    sweeps: int = 200
    burn_in: int = 50
    thin: int = 5
    tol: float = 1e-3
    seed: int = 0
    obs_mode: str = "dpp-marginal"
    alpha: float = 1.0
    tau: float = 1.0
    gamma: float = 1.0
    literal_pe: bool = False
    literal_weights: bool = False
    literal_pc: bool = False
    resample_edges: bool = False
    exact_dpp_sample: bool = False
    threads: Optional[int] = None

    def validate(self) -> "InferenceConfig":
        problems = []
        if not self.window > 0:
            problems.append("window must be > 0")
        if not self.temperature > 0:
            problems.append("temperature must be > 0")
        if self.q is not None and self.q < 1:
            problems.append("q must be >= 1")
        if self.q_ratio is not None and not self.q_ratio > 0:
            problems.append("q_ratio must be > 0")
        if self.q is not None and self.q_ratio is not None:
            problems.append("give either q or q_ratio, not both")
        if self.sweeps < 1:
            problems.append("sweeps must be >= 1")
        if self.outer_iterations < 1:
            problems.append("outer_iterations must be >= 1")
        if not 0 <= self.burn_in < self.sweeps:
            problems.append("burn_in must be in [0, sweeps)")
        if self.thin < 1:
            problems.append("thin must be >= 1")
        if self.obs_mode not in OBS_MODES:
            problems.append(f"obs_mode must be one of {OBS_MODES}")
        if self.threads is not None and self.threads < 1:
            problems.append("threads must be >= 1")
        try:
            self.hyper()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise InvalidConfigError("; ".join(problems))
        return self

    def hyper(self) -> Hyperparams:
        return Hyperparams(self.alpha, self.tau, self.gamma)

    def sample_size(self, n_edges: int) -> int:
        if self.q is not None:
            q = self.q
        elif self.q_ratio is not None:
            q = int(round(self.q_ratio * n_edges))
        else:
            q = n_edges - 1
        return max(1, q)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InferenceConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


class ObservationMultiset:
    """Sampled edge instances with their source cascades and cluster labels.

    One row per instance; an edge sampled from ``z`` cascades appears in
    ``z`` rows. ``candidates[c]`` holds cascade ``c``'s candidate edges for
    the edge-resampling move.
    """

    def __init__(self, src=(), dst=(), cascade=(), candidates=None):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.cascade = np.asarray(cascade, dtype=np.int64)
        n = len(self.src)
        self.cluster = np.full(n, -1, dtype=np.int64)
        self.opened = np.zeros((n, 2), dtype=bool)
        self.candidates: List[List[DirectedEdge]] = candidates or []
        self.cascade_ids: List[str] = []

    def __len__(self) -> int:
        return len(self.src)

    def entries(self) -> List[Tuple[DirectedEdge, int, Tuple[str, ...]]]:
        """Aggregated ``(edge, multiplicity, source cascade ids)`` sorted by edge."""
        groups: Dict[DirectedEdge, List[str]] = {}
        for u, v, c in zip(self.src.tolist(), self.dst.tolist(), self.cascade.tolist()):
            cid = self.cascade_ids[c] if self.cascade_ids else str(c)
            groups.setdefault(DirectedEdge(u, v), []).append(cid)
        return [(e, len(ids), tuple(ids)) for e, ids in sorted(groups.items())]

    def multiplicity(self) -> Dict[DirectedEdge, int]:
        return {e: z for e, z, _ in self.entries()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "src": self.src.tolist(),
            "dst": self.dst.tolist(),
            "cascade": self.cascade.tolist(),
            "cluster": self.cluster.tolist(),
            "opened": self.opened.astype(int).tolist(),
        }


@dataclass
class EdgeProbabilitySnapshot:
    """Posterior-predictive probability of every ordered node pair."""

    window_start: float
    matrix: np.ndarray

    def rows(self, min_prob: float = 0.0):
        P = self.matrix
        n = P.shape[0]
        for u in range(n):
            row = P[u]
            for v in np.flatnonzero(row > min_prob).tolist():
                if u != v:
                    yield self.window_start, u, v, float(row[v])

    def prob(self, u: int, v: int) -> float:
        return float(self.matrix[u, v])


@dataclass
class UpdateResult:
    state: MdndState
    observations: ObservationMultiset
    matrix: np.ndarray
    deltas: List[float] = field(default_factory=list)
    outer_iterations: int = 0
    sweeps: int = 0


STREAMS = ("generation", "extraction", "gibbs")


def named_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators per named stream: ``SeedSequence([seed, i])`` for the i-th name."""
    return {name: np.random.default_rng(np.random.SeedSequence([int(seed), i]))
            for i, name in enumerate(STREAMS)}


def init_model(cfg: InferenceConfig) -> MdndState:
    """Empty collapsed state: no clusters, no observations, ``beta_n = 1``."""
    return MdndState(cfg.hyper())


def _threads(cfg: InferenceConfig) -> int:
    if cfg.threads:
        return cfg.threads
    env = os.environ.get("DYNET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def weights_from_matrix(P: np.ndarray, edges: Sequence[DirectedEdge],
                        fallback: Mapping[DirectedEdge, float], literal: bool = False) -> Dict[DirectedEdge, float]:
    """Edge weights ``d = -log p`` from a predictive matrix (``d = p`` if ``literal``).

    Edges the model gives zero probability fall back to ``fallback``.
    """
    out = {}
    for e in edges:
        p = float(P[e.src, e.dst]) if e.src < P.shape[0] and e.dst < P.shape[0] else 0.0
        if p <= 0.0:
            out[e] = fallback[e]
        elif literal:
            out[e] = p
        else:
            out[e] = min(-math.log(max(p, PROB_FLOOR)), MAX_WEIGHT)
    return out


def _extract_one(c: Cascade, weights: Mapping[DirectedEdge, float], cfg: InferenceConfig,
                 seed: Sequence[int]) -> List[DirectedEdge]:
    rng = np.random.default_rng(list(seed))
    td = TreeDistribution.from_cascade(c, weights, cfg.temperature)
    q = cfg.sample_size(len(td.edges))
    if cfg.obs_mode == "map-tree":
        w = td.edge_weights()
        return map_tree(c, dict(zip(td.edges, w.tolist())))
    if cfg.exact_dpp_sample:
        return sample_dpp_tree(build_kernel(td), rng)[:q]
    if q >= len(td.edges):
        return list(td.edges)
    return sample_observation_edges(td, q, rng, marginal_array(td))


def extract_observations(cs: CascadeSet, weights: Mapping[DirectedEdge, float], cfg: InferenceConfig,
                         rng: np.random.Generator) -> ObservationMultiset:
    """Sample a set of edges from each cascade's tree distribution and pool them.

    Each cascade draws from its own stream keyed by its position among the
    usable cascades, so results do not depend on the thread count.
    """
    keep = usable_cascades(cs, warn=True)
    base = int(rng.integers(2 ** 62))
    casc = [cs.cascades[i] for i in keep]
    jobs = [(c, weights, cfg, (base, j)) for j, c in enumerate(casc)]
    n_threads = min(_threads(cfg), max(1, len(jobs)))
    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(lambda a: _extract_one(*a), jobs))
    else:
        results = [_extract_one(*a) for a in jobs]
    src, dst, cidx = [], [], []
    for j, edges in enumerate(results):
        for e in edges:
            src.append(e.src)
            dst.append(e.dst)
            cidx.append(j)
    obs = ObservationMultiset(src, dst, cidx, [candidate_edges(c)[0] for c in casc])
    obs.cascade_ids = [c.id for c in casc]
    return obs


def _draw(w: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(w) - 1))


def _pair_predictive(st: MdndState, pairs: Sequence[DirectedEdge], literal: bool) -> np.ndarray:
    out = np.empty(len(pairs))
    for n, (u, v) in enumerate(pairs):
        out[n] = mdnd.predictive_edge(st, u if st.is_known(u) else None,
                                      v if st.is_known(v) else None, literal)
    return out


def seat_observations(st: MdndState, obs: ObservationMultiset, cfg: InferenceConfig,
                      rng: np.random.Generator) -> None:
    """Give every unlabeled instance a cluster drawn from its conditional."""
    for n in range(len(obs)):
        u, v = int(obs.src[n]), int(obs.dst[n])
        st.register_node(u, rng)
        st.register_node(v, rng)
        k = _draw(mdnd.cluster_weights(st, u, v, cfg.literal_pc), rng)
        obs.opened[n] = mdnd.add_observation(st, (u, v), k, rng)
        obs.cluster[n] = k


def unseat_observations(st: MdndState, obs: ObservationMultiset, others: Sequence[ObservationMultiset] = ()) -> None:
    for n in range(len(obs)):
        k = int(obs.cluster[n])
        moved = mdnd.remove_observation(st, (int(obs.src[n]), int(obs.dst[n])), k, tuple(obs.opened[n]))
        obs.cluster[n] = -1
        if moved is not None:
            old, new = moved
            obs.cluster[obs.cluster == old] = new
            for o in others:
                o.cluster[o.cluster == old] = new


def resample_instance(st: MdndState, obs: ObservationMultiset, n: int, cfg: InferenceConfig,
                      rng: np.random.Generator) -> None:
    """One Gibbs step: take instance ``n`` out, redraw its cluster (and edge, if enabled), reseat it."""
    tau = st.hyper.tau
    labels = obs.cluster
    u, v, k = int(obs.src[n]), int(obs.dst[n]), int(labels[n])
    moved = mdnd.remove_observation(st, (u, v), k, (bool(obs.opened[n, 0]), bool(obs.opened[n, 1])))
    if moved is not None:
        labels[labels == moved[0]] = moved[1]
    if cfg.resample_edges:
        cand = obs.candidates[int(obs.cascade[n])]
        e = cand[_draw(_pair_predictive(st, cand, cfg.literal_pe), rng)]
        u, v = e.src, e.dst
        st.register_node(u, rng)
        st.register_node(v, rng)
        obs.src[n], obs.dst[n] = u, v
    K = st.K
    bu, bv = st.beta[u], st.beta[v]
    eta = st.eta[:K]
    fu = st.out_l[:K, u] + tau * bu
    fv = st.in_l[:K, v] + tau * bv
    w = np.empty(K + 1)
    # inlined mdnd.cluster_weights
    if cfg.literal_pc:
        w[:K] = eta * fu * fv
        w[K] = st.hyper.alpha * tau * tau * bu * bv
    else:
        w[:K] = eta * fu * fv / (eta + tau) ** 2
        w[K] = st.hyper.alpha * bu * bv
    k = _draw(w, rng)
    obs.opened[n] = mdnd.add_observation(st, (u, v), k, rng)
    labels[n] = k
    mdnd.resample_tables(st, k, u, v, rng)


def gibbs_sweep(st: MdndState, obs: ObservationMultiset, cfg: InferenceConfig,
                rng: np.random.Generator) -> None:
    """Visit every instance once in shuffled order, then redraw ``beta``."""
    for n in rng.permutation(len(obs)).tolist():
        resample_instance(st, obs, n, cfg, rng)
    mdnd.sample_beta(st, rng)


def update_network_model(st: MdndState, cs: CascadeSet, cfg: InferenceConfig, rng: np.random.Generator,
                         previous: Optional[ObservationMultiset] = None,
                         prior_matrix: Optional[np.ndarray] = None,
                         observer: Optional[Callable[[int, np.ndarray], None]] = None,
                         extract_rng: Optional[np.random.Generator] = None) -> UpdateResult:
    """Alternate observation extraction and Gibbs sweeps on ``st`` (in place).

    ``previous`` are observations already seated in ``st`` (a warm start);
    they are replaced by each freshly extracted set. ``prior_matrix`` is the
    predictive matrix used to weight the first extraction; without it the
    delay-based initial weights are used. Extraction draws from
    ``extract_rng`` when given, otherwise from ``rng``.
    """
    cfg.validate()
    if extract_rng is None:
        extract_rng = rng
    if not usable_cascades(cs):
        raise EmptyInputError("no cascade with two distinct infection times")
    n_nodes = len(cs.node_table)
    st.ensure_capacity(n_nodes)
    fallback = initial_weights(cs)
    edges = list(fallback)
    seated = previous
    matrix = prior_matrix
    deltas: List[float] = []
    sweeps_done = 0
    it = 0
    for it in range(1, cfg.outer_iterations + 1):
        if matrix is None:
            weights = fallback
        else:
            weights = weights_from_matrix(matrix, edges, fallback, cfg.literal_weights)
        obs = extract_observations(cs, weights, cfg, extract_rng)
        seat_observations(st, obs, cfg, rng)
        if seated is not None and len(seated):
            unseat_observations(st, seated, others=(obs,))
        seated = obs
        acc = np.zeros((n_nodes, n_nodes))
        kept = 0
        for s in range(cfg.sweeps):
            gibbs_sweep(st, obs, cfg, rng)
            sweeps_done += 1
            if s >= cfg.burn_in and (s - cfg.burn_in) % cfg.thin == 0:
                acc += mdnd.edge_probability_matrix(st, n_nodes, cfg.literal_pe)
                kept += 1
        new_matrix = acc / kept
        if observer is not None:
            observer(it, new_matrix)
        if it > 1:
            deltas.append(float(np.mean(np.abs(new_matrix - matrix))))
        matrix = new_matrix
        if deltas and deltas[-1] < cfg.tol:
            break
    return UpdateResult(st, seated, matrix, deltas, it, sweeps_done)


@dataclass
class WindowResult:
    start: float
    snapshot: EdgeProbabilitySnapshot
    checkpoint: str
    n_observations: int
    outer_iterations: int
    sweeps: int
    deltas: List[float]


def window_starts(cs: CascadeSet, width: float) -> List[float]:
    """Starts of the width-``w`` windows tiling ``[0, last infection]``."""
    t_max = cs.max_time()
    n = int(math.floor(t_max / width)) + 1
    return [i * width for i in range(n)]


def dyference(cs: CascadeSet, cfg: InferenceConfig, rng: np.random.Generator,
              starts: Optional[Sequence[float]] = None,
              on_window: Optional[Callable[[WindowResult], None]] = None,
              extract_rng: Optional[np.random.Generator] = None) -> List[WindowResult]:
    """Update one model window by window, warm-starting each from the last."""
    cfg.validate()
    if not len(cs) or not any(len(c) for c in cs.cascades):
        raise EmptyInputError("cascade set is empty")
    if starts is None:
        starts = window_starts(cs, cfg.window)
    n_nodes = len(cs.node_table)
    st = init_model(cfg)
    st.ensure_capacity(n_nodes)
    seated: Optional[ObservationMultiset] = None
    matrix: Optional[np.ndarray] = None
    results = []
    for start in starts:
        ycs = window_slice(cs, start, cfg.window)
        if usable_cascades(ycs):
            res = update_network_model(st, ycs, cfg, rng, seated, matrix, extract_rng=extract_rng)
            seated, matrix = res.observations, res.matrix
            info = (res.outer_iterations, res.sweeps, res.deltas)
        else:
            log.info("window at %s has no usable cascades; carrying the model forward", start)
            if matrix is None:
                matrix = mdnd.edge_probability_matrix(st, n_nodes, cfg.literal_pe)
            info = (0, 0, [])
        extra = {
            "window_start": float(start),
            "observations": None if seated is None else seated.to_dict(),
        }
        if extract_rng is not None:
            extra["extraction_rng"] = extract_rng.bit_generator.state
        ckpt = mdnd.dump_checkpoint(st, cs.node_table.labels, rng, extra)
        wr = WindowResult(float(start), EdgeProbabilitySnapshot(float(start), matrix.copy()), ckpt,
                          0 if seated is None else len(seated), *info)
        results.append(wr)
        if on_window is not None:
            on_window(wr)
    return results
