"""Collapsed mixture of Dirichlet network distributions.

Only sufficient statistics are stored: per-cluster edge counts ``eta``,
per-cluster out-link and in-link counts per node, the matching
Chinese-restaurant table counts, and the global node masses ``beta`` with
the remainder ``beta_n`` reserved for nodes not seen yet. The stick-breaking
weights and per-cluster Dirichlet processes are integrated out.

Nodes are addressed by their global index. A node is *known* once it has a
mass in ``beta``; it enters by breaking a piece off ``beta_n`` and leaves
when a ``beta`` redraw finds no tables attached to it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .graph import DirectedEdge

CHECKPOINT_FORMAT = "dyference-mdnd"
CHECKPOINT_VERSION = 1
STIRLING_CROSSOVER = 30


class UnknownNodeError(KeyError):
    pass


class BookkeepingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 1.0
    tau: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "tau", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


class StirlingTable:
    """Logs of unsigned Stirling numbers of the first kind, grown on demand.

    ``log_s[n][m]`` is ``-inf`` where ``s(n, m) = 0``.
    """

    def __init__(self, n_max: int = STIRLING_CROSSOVER):
        self._rows: List[np.ndarray] = [np.array([0.0])]
        self.extend(n_max)

    @property
    def n_max(self) -> int:
        return len(self._rows) - 1

    def extend(self, n_max: int) -> None:
        while self.n_max < n_max:
            n = self.n_max
            prev = self._rows[-1]
            row = np.full(n + 2, -np.inf)
            # s(n+1, m) = s(n, m-1) + n s(n, m)
            shifted = np.concatenate(([-np.inf], prev))
            scaled = np.concatenate((prev + math.log(n), [-np.inf])) if n > 0 else np.full(n + 2, -np.inf)
            row[:] = np.logaddexp(shifted, scaled)
            self._rows.append(row)

    def row(self, n: int) -> np.ndarray:
        if n > self.n_max:
            self.extend(n)
        return self._rows[n]

    def log_s(self, n: int, m: int) -> float:
        if m < 0 or m > n:
            return -math.inf
        return float(self.row(n)[m])


_STIRLING = StirlingTable()


def rho_conditional(l: int, tau_beta: float, table: Optional[StirlingTable] = None) -> np.ndarray:
    """Distribution of the table count for ``l`` customers, indexed ``0..l``.

    ``p(rho) = Gamma(tb) / Gamma(tb + l) * s(l, rho) * tb**rho``.
    """
    if l <= 0:
        return np.array([1.0])
    table = table or _STIRLING
    logw = table.row(l) + np.arange(l + 1) * math.log(tau_beta)
    logw += gammaln(tau_beta) - gammaln(tau_beta + l)
    logw[0] = -np.inf
    p = np.exp(logw - np.max(logw))
    return p / p.sum()


def crp_tables(l: int, tau_beta: float, rng: np.random.Generator, size: Optional[int] = None):
    """Seat ``l`` customers one by one; customer ``i`` opens a table w.p. tb/(i+tb).

    With ``size``, returns an array of that many independent table counts.
    """
    if l <= 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    p_open = tau_beta / (np.arange(l) + tau_beta)
    if size is None:
        return int(np.count_nonzero(rng.random(l) < p_open))
    return np.count_nonzero(rng.random((size, l)) < p_open, axis=1)


def sample_rho(l: int, tau_beta: float, rng: np.random.Generator,
               crossover: int = STIRLING_CROSSOVER) -> int:
    if l <= 0:
        return 0
    if l == 1:
        return 1
    if l > crossover:
        return crp_tables(l, tau_beta, rng)
    p = rho_conditional(l, tau_beta)
    return int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), l))


class MdndState:
    """Mutable collapsed state; a single writer at a time."""

    def __init__(self, hyper: Hyperparams = Hyperparams(), n_cap: int = 0):
        self.hyper = hyper
        self.M = 0
        self.K = 0
        self.beta_n = 1.0
        self._ncap = 0
        self._kcap = 0
        self.eta = np.zeros(0, dtype=np.int64)
        self.created = np.zeros(0, dtype=np.int64)
        self.out_l = np.zeros((0, 0), dtype=np.int64)
        self.in_l = np.zeros((0, 0), dtype=np.int64)
        self.out_rho = np.zeros((0, 0), dtype=np.int64)
        self.in_rho = np.zeros((0, 0), dtype=np.int64)
        self.beta = np.zeros(0)
        self.known = np.zeros(0, dtype=bool)
        self.next_created = 0
        self._grow(n_cap, 4)

    # -- storage -------------------------------------------------------

    def _grow(self, ncap: int, kcap: int) -> None:
        ncap = max(ncap, self._ncap)
        kcap = max(kcap, self._kcap)
        if ncap == self._ncap and kcap == self._kcap:
            return

        def resize(a, shape):
            out = np.zeros(shape, dtype=a.dtype)
            out[tuple(slice(0, s) for s in a.shape)] = a
            return out

        for name in ("out_l", "in_l", "out_rho", "in_rho"):
            setattr(self, name, resize(getattr(self, name), (kcap, ncap)))
        self.eta = resize(self.eta, (kcap,))
        self.created = resize(self.created, (kcap,))
        self.beta = resize(self.beta, (ncap,))
        self.known = resize(self.known, (ncap,))
        self._ncap, self._kcap = ncap, kcap

    def ensure_capacity(self, n_nodes: int) -> None:
        if n_nodes > self._ncap:
            self._grow(max(n_nodes, 2 * self._ncap), self._kcap)

    @property
    def N(self) -> int:
        return int(self.known.sum())

    @property
    def n_cap(self) -> int:
        return self._ncap

    def is_known(self, i: int) -> bool:
        return 0 <= i < self._ncap and bool(self.known[i])

    def register_node(self, i: int, rng: np.random.Generator) -> None:
        """Give node ``i`` a mass broken off the remainder: ``b ~ Beta(1, gamma)``."""
        self.ensure_capacity(i + 1)
        if self.known[i]:
            return
        b = rng.beta(1.0, self.hyper.gamma)
        piece = b * self.beta_n
        self.beta[i] = piece
        self.beta_n -= piece
        self.known[i] = True

    def _new_cluster(self) -> int:
        if self.K == self._kcap:
            self._grow(self._ncap, 2 * self._kcap)
        k = self.K
        self.eta[k] = 0
        self.created[k] = self.next_created
        self.next_created += 1
        for a in (self.out_l, self.in_l, self.out_rho, self.in_rho):
            a[k] = 0
        self.K += 1
        return k

    def _retire(self, k: int) -> Optional[Tuple[int, int]]:
        """Drop empty cluster ``k`` by moving the last row into its slot."""
        last = self.K - 1
        moved = None
        if self.created[k] == self.next_created - 1:
            # hand the newest stamp back so add/remove round-trips exactly
            self.next_created -= 1
        if k != last:
            for a in (self.eta, self.created):
                a[k] = a[last]
            for a in (self.out_l, self.in_l, self.out_rho, self.in_rho):
                a[k] = a[last]
            moved = (last, k)
        self.eta[last] = 0
        for a in (self.out_l, self.in_l, self.out_rho, self.in_rho):
            a[last] = 0
        self.K -= 1
        return moved

    # -- views ---------------------------------------------------------

    def copy(self) -> "MdndState":
        other = MdndState.__new__(MdndState)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                               for k, v in self.__dict__.items()})
        return other

    def canonical_order(self) -> List[int]:
        """Active cluster rows by decreasing size, then creation time."""
        return sorted(range(self.K), key=lambda k: (-int(self.eta[k]), int(self.created[k])))

    def table_totals(self) -> np.ndarray:
        k = self.K
        return self.out_rho[:k].sum(axis=0) + self.in_rho[:k].sum(axis=0)

    def check_invariants(self, atol: float = 1e-12) -> None:
        K = self.K
        eta = self.eta[:K]
        if int(eta.sum()) != self.M:
            raise BookkeepingError(f"sum eta = {eta.sum()} != M = {self.M}")
        if K and eta.min() < 1:
            raise BookkeepingError("active cluster with eta < 1")
        for name_l, name_r in (("out_l", "out_rho"), ("in_l", "in_rho")):
            l, r = getattr(self, name_l)[:K], getattr(self, name_r)[:K]
            if not np.array_equal(l.sum(axis=1), eta):
                raise BookkeepingError(f"{name_l} row sums differ from eta")
            if np.any((l == 0) != (r == 0)) or np.any(r > l) or np.any(r < 0):
                raise BookkeepingError(f"{name_r} inconsistent with {name_l}")
            if np.any(l[:, ~self.known] > 0):
                raise BookkeepingError("links attached to a node without mass")
        total = self.beta[self.known].sum() + self.beta_n
        if abs(total - 1.0) > atol:
            raise BookkeepingError(f"beta sums to {total}")
        if np.any(self.beta[self.known] <= 0) or self.beta_n <= 0:
            raise BookkeepingError("non-positive node mass")

    # -- checkpoint ----------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        clusters = []
        for k in self.canonical_order():
            out_nodes = np.flatnonzero(self.out_l[k])
            in_nodes = np.flatnonzero(self.in_l[k])
            clusters.append({
                "eta": int(self.eta[k]),
                "created": int(self.created[k]),
                "out": [[int(u), int(self.out_l[k, u]), int(self.out_rho[k, u])] for u in out_nodes],
                "in": [[int(v), int(self.in_l[k, v]), int(self.in_rho[k, v])] for v in in_nodes],
            })
        known = np.flatnonzero(self.known)
        return {
            "hyper": asdict(self.hyper),
            "M": int(self.M),
            "beta_n": float(self.beta_n),
            "beta": [[int(i), float(self.beta[i])] for i in known],
            "n_cap": int(self._ncap),
            "next_created": int(self.next_created),
            "clusters": clusters,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MdndState":
        st = cls(Hyperparams(**data["hyper"]), n_cap=int(data["n_cap"]))
        st._grow(st._ncap, max(4, len(data["clusters"])))
        st.M = int(data["M"])
        st.beta_n = float(data["beta_n"])
        for i, b in data["beta"]:
            st.beta[i] = b
            st.known[i] = True
        for c in data["clusters"]:
            k = st.K
            st.K += 1
            st.eta[k] = c["eta"]
            st.created[k] = c["created"]
            for u, l, r in c["out"]:
                st.out_l[k, u], st.out_rho[k, u] = l, r
            for v, l, r in c["in"]:
                st.in_l[k, v], st.in_rho[k, v] = l, r
        st.next_created = int(data["next_created"])
        return st


def dump_checkpoint(st: MdndState, node_labels: Sequence[str] = (),
                    rng: Optional[np.random.Generator] = None,
                    extra: Optional[Dict[str, Any]] = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": st.to_dict(),
        "nodes": list(node_labels),
        "rng": None if rng is None else rng.bit_generator.state,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def load_checkpoint(text: str) -> Tuple[MdndState, Dict[str, Any]]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return MdndState.from_dict(doc["model"]), doc


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


# -- observation bookkeeping ---------------------------------------------

def add_observation(st: MdndState, e: Tuple[int, int], k: int,
                    rng: np.random.Generator) -> Tuple[bool, bool]:
    """Seat edge ``e`` in cluster ``k`` (``k == st.K`` opens a new one).

    Returns whether the out- and in-link each opened a new table, which
    :func:`remove_observation` needs to undo the seating exactly.
    """
    u, v = e
    if not 0 <= k <= st.K:
        raise BookkeepingError(f"cluster {k} out of range (K={st.K})")
    st.register_node(u, rng)
    st.register_node(v, rng)
    if k == st.K:
        k = st._new_cluster()
    tb_u = st.hyper.tau * st.beta[u]
    tb_v = st.hyper.tau * st.beta[v]
    lu = st.out_l[k, u]
    lv = st.in_l[k, v]
    opened_out = bool(lu == 0 or rng.random() < tb_u / (lu + tb_u))
    opened_in = bool(lv == 0 or rng.random() < tb_v / (lv + tb_v))
    st.out_l[k, u] = lu + 1
    st.in_l[k, v] = lv + 1
    st.out_rho[k, u] += opened_out
    st.in_rho[k, v] += opened_in
    st.eta[k] += 1
    st.M += 1
    return opened_out, opened_in


def remove_observation(st: MdndState, e: Tuple[int, int], k: int,
                       opened: Tuple[bool, bool] = (False, False)) -> Optional[Tuple[int, int]]:
    """Undo :func:`add_observation`.

    If the cluster empties it is retired; the return value is then the
    ``(old, new)`` row move the caller must apply to its labels.
    """
    u, v = e
    if not 0 <= k < st.K or st.out_l[k, u] < 1 or st.in_l[k, v] < 1:
        raise BookkeepingError(f"edge {u}->{v} is not present in cluster {k}")
    for l_arr, r_arr, i, op in ((st.out_l, st.out_rho, u, opened[0]), (st.in_l, st.in_rho, v, opened[1])):
        l = l_arr[k, i] - 1
        r = r_arr[k, i] - int(op)
        l_arr[k, i] = l
        r_arr[k, i] = 0 if l == 0 else min(max(r, 1), l)
    st.eta[k] -= 1
    st.M -= 1
    if st.eta[k] == 0:
        return st._retire(k)
    return None


def resample_tables(st: MdndState, k: int, u: int, v: int, rng: np.random.Generator) -> None:
    """Redraw the out-table count of ``u`` and in-table count of ``v`` in cluster ``k``."""
    tau = st.hyper.tau
    st.out_rho[k, u] = sample_rho(int(st.out_l[k, u]), tau * st.beta[u], rng)
    st.in_rho[k, v] = sample_rho(int(st.in_l[k, v]), tau * st.beta[v], rng)


def resample_all_tables(st: MdndState, rng: np.random.Generator) -> None:
    tau = st.hyper.tau
    for l_arr, r_arr in ((st.out_l, st.out_rho), (st.in_l, st.in_rho)):
        ks, nodes = np.nonzero(l_arr[:st.K])
        for k, i in zip(ks.tolist(), nodes.tolist()):
            r_arr[k, i] = sample_rho(int(l_arr[k, i]), tau * st.beta[i], rng)


def sample_beta(st: MdndState, rng: np.random.Generator) -> np.ndarray:
    """Redraw ``(beta_1..beta_N, beta_n) ~ Dir(rho_1, ..., rho_N, gamma)``.

    Nodes with no tables drop out of the draw and lose their mass. Returns
    the full node-mass vector followed by ``beta_n``.
    """
    totals = st.table_totals()
    active = np.flatnonzero(totals > 0)
    conc = np.append(totals[active].astype(float), st.hyper.gamma)
    # Dirichlet via normalized gammas; renormalize once more for the 1e-12 budget
    g = rng.standard_gamma(conc)
    draw = g / g.sum()
    draw = np.maximum(draw, np.finfo(float).tiny)
    draw /= draw.sum()
    st.beta[:] = 0.0
    st.known[:] = False
    st.beta[active] = draw[:-1]
    st.known[active] = True
    st.beta_n = float(1.0 - draw[:-1].sum())
    return np.append(st.beta, st.beta_n)


# -- conditionals --------------------------------------------------------

def _require_known(st: MdndState, *nodes: int) -> None:
    for i in nodes:
        if not st.is_known(i):
            raise UnknownNodeError(f"node {i} has no mass in the model")


def cluster_weights(st: MdndState, u: int, v: int, literal: bool = False) -> np.ndarray:
    """Unnormalized weights over the ``K`` active clusters plus a new one.

    Active cluster ``k`` gets ``eta_k * f_k(u) * g_k(v)`` with
    ``f_k(u) = (l_u + tau b_u) / (eta_k + tau)`` (same for the in-link
    factor ``g``); the new cluster gets ``alpha b_u b_v``. These are the
    link factors of :func:`predictive_edge`. ``literal=True`` drops the
    ``eta_k + tau`` denominators, giving ``eta_k (l_u + tau b_u)(l_v + tau b_v)``
    and ``alpha tau^2 b_u b_v``.
    """
    _require_known(st, u, v)
    h = st.hyper
    K = st.K
    tbu, tbv = h.tau * st.beta[u], h.tau * st.beta[v]
    eta = st.eta[:K].astype(float)
    fu = st.out_l[:K, u] + tbu
    fv = st.in_l[:K, v] + tbv
    w = np.empty(K + 1)
    if literal:
        w[:K] = eta * fu * fv
        w[K] = h.alpha * tbu * tbv
    else:
        w[:K] = eta * fu * fv / (eta + h.tau) ** 2
        w[K] = h.alpha * st.beta[u] * st.beta[v]
    return w


def cluster_conditional(st: MdndState, u: int, v: int, literal: bool = False) -> np.ndarray:
    """Cluster distribution for edge ``u -> v``, already removed from ``st``.

    Entry ``K`` is the probability of opening a new cluster.
    """
    w = cluster_weights(st, u, v, literal)
    return w / w.sum()


def _case_blocks(st: MdndState, nodes: np.ndarray, literal: bool):
    """Predictive blocks over known ``nodes``: (known-known, known-new, new-known, new-new)."""
    h = st.hyper
    K, M, alpha, tau, bn = st.K, st.M, h.alpha, h.tau, st.beta_n
    eta = st.eta[:K].astype(float)
    denom = eta + tau
    coef = eta / (M + alpha)
    a = alpha / (M + alpha)
    beta = st.beta[nodes]
    f_out = (st.out_l[:K][:, nodes] + tau * beta) / denom[:, None]
    f_in = (st.in_l[:K][:, nodes] + tau * beta) / denom[:, None]
    kk = (f_out * coef[:, None]).T @ f_in + a * np.outer(beta, beta)
    if literal:
        # published case table: bare beta_n for a new endpoint, and the
        # new-source case pairs the in-link count with the source's own mass
        kn = coef @ f_out * bn + a * beta * bn
        f_in_lit = (st.in_l[:K][:, nodes] + tau * bn) / denom[:, None]
        nk = coef @ f_in_lit * bn + a * bn * beta
        nn = bn * bn
    else:
        new = tau * bn / denom
        kn = (coef * new) @ f_out + a * beta * bn
        nk = (coef * new) @ f_in + a * bn * beta
        nn = float(np.sum(coef * new * new) + a * bn * bn)
    return kk, kn, nk, nn


def predictive_edge(st: MdndState, i: Optional[int], j: Optional[int], literal: bool = False) -> float:
    """Posterior predictive probability that the next edge is ``i -> j``.

    ``None`` stands for a node not yet in the model. The default form
    sums to one over all ``(i, j)`` pairs including new endpoints; with
    ``literal=True`` the published case table is used as written.
    """
    for x in (i, j):
        if x is not None:
            _require_known(st, x)
    nodes = np.array([x for x in (i, j) if x is not None], dtype=np.int64)
    kk, kn, nk, nn = _case_blocks(st, nodes, literal)
    if i is not None and j is not None:
        return float(kk[0, 1] if i != j else kk[0, 0])
    if i is not None:
        return float(kn[0])
    if j is not None:
        return float(nk[0])
    return float(nn)


def total_predictive_mass(st: MdndState, literal: bool = False) -> float:
    """Sum of the predictive over every known pair and every new endpoint."""
    nodes = np.flatnonzero(st.known)
    kk, kn, nk, nn = _case_blocks(st, nodes, literal)
    return float(kk.sum() + kn.sum() + nk.sum() + nn)


def edge_probability_matrix(st: MdndState, n_nodes: int, literal: bool = False) -> np.ndarray:
    """Predictive probability of every ordered pair over ``n_nodes`` nodes.

    Nodes of the table that the model has not seen share the new-endpoint
    mass equally, with one extra share kept for nodes outside the table.
    The diagonal is zero.
    """
    st.ensure_capacity(n_nodes)
    known = st.known[:n_nodes]
    kn_idx = np.flatnonzero(known)
    unk_idx = np.flatnonzero(~known)
    share = 1.0 / (len(unk_idx) + 1)
    kk, kn, nk, nn = _case_blocks(st, kn_idx, literal)
    P = np.zeros((n_nodes, n_nodes))
    P[np.ix_(kn_idx, kn_idx)] = kk
    if len(unk_idx):
        P[np.ix_(kn_idx, unk_idx)] = (kn * share)[:, None]
        P[np.ix_(unk_idx, kn_idx)] = (nk * share)[None, :]
        P[np.ix_(unk_idx, unk_idx)] = nn * share * share
    np.fill_diagonal(P, 0.0)
    return P
