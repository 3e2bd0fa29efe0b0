import math

import numpy as np
import pytest

from conftest import random_state
from dyference import mdnd
from dyference.mdnd import (BookkeepingError, Hyperparams, MdndState, StirlingTable, UnknownNodeError,
                            add_observation, cluster_conditional, cluster_weights, crp_tables,
                            dump_checkpoint, edge_probability_matrix, load_checkpoint, predictive_edge,
                            remove_observation, restore_rng, rho_conditional, sample_beta, sample_rho,
                            total_predictive_mass)
from oracles import rho_distribution, stirling_first


def state_with_masses(masses, beta_n, hyper=Hyperparams()):
    st = MdndState(hyper, n_cap=len(masses))
    st.beta[:len(masses)] = masses
    st.known[:len(masses)] = True
    st.beta_n = beta_n
    return st


# -- Stirling numbers and table counts ----------------------------------

def test_stirling_base_cases():
    t = StirlingTable(5)
    assert t.log_s(0, 0) == 0.0 and t.log_s(1, 1) == 0.0
    assert t.log_s(3, 0) == -math.inf and t.log_s(2, 3) == -math.inf


def test_stirling_against_polynomial_oracle():
    t = StirlingTable()
    for n in range(1, 40):
        exact = stirling_first(n)
        for m in range(1, n + 1):
            assert t.log_s(n, m) == pytest.approx(math.log(exact[m]), rel=1e-12, abs=1e-12)


def test_rho_conditional_examples():
    assert rho_conditional(1, 2.3).tolist() == [0.0, 1.0]
    assert rho_conditional(2, 1.0)[1:] == pytest.approx([0.5, 0.5])
    assert rho_conditional(3, 1.0)[1:] == pytest.approx([1 / 3, 1 / 2, 1 / 6])
    assert rho_conditional(0, 1.0).tolist() == [1.0]


@pytest.mark.parametrize("l", [1, 4, 12, 30])
@pytest.mark.parametrize("tb", [0.01, 0.5, 3.0, 40.0])
def test_rho_conditional_matches_oracle(l, tb):
    p = rho_conditional(l, tb)
    assert p.sum() == pytest.approx(1.0, abs=1e-12) and p.min() >= 0
    assert p == pytest.approx(rho_distribution(l, tb), rel=1e-9, abs=1e-14)


def test_crp_tables_small_cases():
    rng = np.random.default_rng(0)
    assert crp_tables(0, 1.0, rng) == 0
    assert all(crp_tables(1, 0.3, rng) == 1 for _ in range(20))
    draws = [crp_tables(5, 2.0, rng) for _ in range(200)]
    assert 1 <= min(draws) and max(draws) <= 5


def test_sample_rho_range_and_crossover():
    rng = np.random.default_rng(1)
    for l, tb in [(0, 1.0), (1, 0.2), (7, 1.5), (45, 0.8)]:
        r = sample_rho(l, tb, rng)
        assert (r == 0) if l == 0 else (1 <= r <= l)
    # above the crossover the CRP path must still average like the analytic law
    l, tb = 40, 2.0
    mean = np.mean([sample_rho(l, tb, rng) for _ in range(4000)])
    exact = float(np.dot(np.arange(l + 1), rho_distribution(l, tb)))
    assert abs(mean - exact) < 0.15


# -- cluster conditional ------------------------------------------------

def test_cluster_conditional_empty_model():
    st = state_with_masses([0.1, 0.2], 0.7)
    assert cluster_conditional(st, 0, 1).tolist() == [1.0]


def _one_cluster_state():
    st = state_with_masses([0.1, 0.2], 0.7)
    k = st._new_cluster()
    st.eta[k] = 2
    st.out_l[k, 0] = 1
    st.out_l[k, 1] = 1
    st.in_l[k, 1] = 1
    st.in_l[k, 0] = 1
    st.M = 2
    return st


def test_cluster_conditional_literal_example():
    p = cluster_conditional(_one_cluster_state(), 0, 1, literal=True)
    assert cluster_weights(_one_cluster_state(), 0, 1, literal=True) == pytest.approx([2.64, 0.02])
    assert p == pytest.approx([2.64 / 2.66, 0.02 / 2.66])
    assert np.round(p, 4).tolist() == [0.9925, 0.0075]


def test_cluster_conditional_consistent_example():
    # eta (l_u + tau b_u)(l_v + tau b_v) / (eta + tau)^2 against alpha b_u b_v
    w = cluster_weights(_one_cluster_state(), 0, 1)
    assert w == pytest.approx([2 * 1.1 * 1.2 / 9, 0.02])
    p = cluster_conditional(_one_cluster_state(), 0, 1)
    assert p == pytest.approx([0.93617021, 0.06382979], abs=1e-8)


def test_cluster_conditional_drops_emptied_cluster():
    rng = np.random.default_rng(0)
    st = state_with_masses([0.1, 0.2], 0.7)
    opened = add_observation(st, (0, 1), 0, rng)
    remove_observation(st, (0, 1), 0, opened)
    assert st.K == 0 and cluster_conditional(st, 0, 1).tolist() == [1.0]


def test_cluster_conditional_valid_and_scale_free():
    rng = np.random.default_rng(5)
    for _ in range(20):
        st = random_state(rng)
        u, v = np.flatnonzero(st.known)[:2]
        for literal in (False, True):
            w = cluster_weights(st, u, v, literal)
            p = w / w.sum()
            assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
            assert np.max(np.abs((7.3 * w) / (7.3 * w).sum() - p)) < 1e-12


def test_unknown_node():
    st = state_with_masses([0.5], 0.5)
    with pytest.raises(UnknownNodeError):
        cluster_conditional(st, 0, 3)
    with pytest.raises(UnknownNodeError):
        predictive_edge(st, 0, 3)


# -- predictive ---------------------------------------------------------

def test_predictive_empty_model():
    st = MdndState()
    assert predictive_edge(st, None, None) == 1.0
    assert total_predictive_mass(st) == 1.0


def test_predictive_alpha_term_only():
    st = state_with_masses([0.3, 0.2], 0.5)
    assert predictive_edge(st, 0, 1) == pytest.approx(0.06)


def test_predictive_normalizes_on_random_states():
    rng = np.random.default_rng(21)
    for _ in range(50):
        st = random_state(rng, n_nodes=int(rng.integers(2, 12)), n_obs=int(rng.integers(1, 60)))
        assert abs(total_predictive_mass(st) - 1.0) < 1e-10
        nodes = list(np.flatnonzero(st.known)) + [None]
        brute = sum(predictive_edge(st, i, j) for i in nodes for j in nodes)
        assert abs(brute - 1.0) < 1e-10


def test_literal_predictive_is_not_normalized():
    rng = np.random.default_rng(3)
    st = random_state(rng, n_obs=40)
    assert abs(total_predictive_mass(st, literal=True) - 1.0) > 1e-3


def test_edge_probability_matrix_empty_and_mass():
    st = MdndState()
    P = edge_probability_matrix(st, 4)
    # no node is known, so the known block is empty; table nodes split the new-node mass
    assert st.N == 0
    off = P[~np.eye(4, dtype=bool)]
    assert off == pytest.approx(np.full(12, 1 / 25))
    rng = np.random.default_rng(2)
    st = random_state(rng, n_nodes=6)
    P = edge_probability_matrix(st, 6)
    assert np.all(np.diag(P) == 0) and 0 <= P.sum() <= 1


def test_edge_probability_matrix_matches_predictive():
    rng = np.random.default_rng(4)
    st = random_state(rng, n_nodes=5)
    P = edge_probability_matrix(st, 5)
    for i in np.flatnonzero(st.known):
        for j in np.flatnonzero(st.known):
            if i != j:
                assert P[i, j] == pytest.approx(predictive_edge(st, i, j), abs=1e-15)


def test_unseen_nodes_share_new_mass():
    rng = np.random.default_rng(0)
    st = MdndState()
    add_observation(st, (0, 1), 0, rng)
    P = edge_probability_matrix(st, 4)
    # two unseen table nodes plus one share for nodes outside the table
    assert P[0, 2] == pytest.approx(predictive_edge(st, 0, None) / 3)
    assert P[2, 3] == pytest.approx(predictive_edge(st, None, None) / 9)


def test_repeated_observation_dominates():
    rng = np.random.default_rng(6)
    st = MdndState()
    for _ in range(10):
        add_observation(st, (0, 1), 0 if st.K else 0, rng)
    for i in range(2, 5):
        st.register_node(i, rng)
    P = edge_probability_matrix(st, 5)
    top = P[0, 1]
    P[0, 1] = 0
    assert top > P.max()


# -- beta ---------------------------------------------------------------

def test_sample_beta_no_nodes():
    st = MdndState()
    sample_beta(st, np.random.default_rng(0))
    assert st.beta_n == 1.0 and st.N == 0


def test_sample_beta_mean():
    rng = np.random.default_rng(9)
    st = MdndState(n_cap=2)
    k = st._new_cluster()
    st.out_rho[k, 0], st.in_rho[k, 0], st.out_rho[k, 1] = 2, 1, 1
    draws = np.array([sample_beta(st, rng)[[0, 1, 2]] for _ in range(100_000)])
    assert draws.mean(axis=0) == pytest.approx([0.6, 0.2, 0.2], abs=0.01)


def test_sample_beta_normalized_and_seeded():
    st = random_state(np.random.default_rng(1))
    a = sample_beta(st.copy(), np.random.default_rng(3))
    b = sample_beta(st.copy(), np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert abs(a.sum() - 1) < 1e-12 and np.all(a[a > 0] > 0)


# -- bookkeeping --------------------------------------------------------

def test_first_observation():
    st = MdndState()
    add_observation(st, (0, 1), 0, np.random.default_rng(0))
    assert (st.K, st.M, st.eta[0], st.out_l[0, 0], st.in_l[0, 1], st.out_rho[0, 0], st.in_rho[0, 1]) == \
        (1, 1, 1, 1, 1, 1, 1)
    st.check_invariants()


def test_add_then_remove_is_exact():
    rng = np.random.default_rng(2)
    st = random_state(rng)
    before = st.to_dict()
    for k in range(st.K + 1):
        opened = add_observation(st, (1, 3), k, rng)
        remove_observation(st, (1, 3), k, opened)
        assert st.to_dict() == before


def test_remove_absent_observation():
    st = random_state(np.random.default_rng(0))
    with pytest.raises(BookkeepingError):
        remove_observation(st, (0, 1), st.K + 2)
    k = int(np.flatnonzero(st.out_l[:st.K, 0] == 0)[0]) if np.any(st.out_l[:st.K, 0] == 0) else None
    if k is not None:
        with pytest.raises(BookkeepingError):
            remove_observation(st, (0, 1), k)


def test_fuzzed_add_remove_conserves_counts():
    rng = np.random.default_rng(13)
    st = MdndState(Hyperparams(0.7, 1.3, 2.0))
    seated = []
    for _ in range(10_000):
        if seated and rng.random() < 0.45:
            i = int(rng.integers(len(seated)))
            (u, v), k, op = seated.pop(i)
            moved = remove_observation(st, (u, v), k, op)
            if moved:
                seated = [(e, moved[1] if kk == moved[0] else kk, o) for e, kk, o in seated]
        else:
            u, v = rng.choice(10, 2, replace=False).tolist()
            st.register_node(u, rng)
            st.register_node(v, rng)
            k = int(rng.integers(st.K + 1))  # k == K opens cluster K
            seated.append(((u, v), k, add_observation(st, (u, v), k, rng)))
        assert int(st.eta[:st.K].sum()) == st.M == len(seated)
    st.check_invariants()


def test_insertion_order_does_not_change_counts():
    rng = np.random.default_rng(4)
    obs = [((int(a), int(b)), int(g)) for a, b, g in zip(rng.integers(0, 5, 40), rng.integers(5, 9, 40),
                                                         rng.integers(0, 4, 40))]

    def build(order):
        st = MdndState()
        slot = {}
        for i in order:
            e, g = obs[i]
            k = slot.setdefault(g, st.K)
            add_observation(st, e, k, rng)
        return sorted((int(st.eta[k]), st.out_l[k, :9].tolist(), st.in_l[k, :9].tolist()) for k in range(st.K))

    assert build(range(40)) == build(rng.permutation(40).tolist())


def test_canonical_order():
    rng = np.random.default_rng(0)
    st = MdndState()
    add_observation(st, (0, 1), 0, rng)
    add_observation(st, (1, 2), 1, rng)
    add_observation(st, (1, 2), 1, rng)
    assert st.canonical_order() == [1, 0]


# -- checkpoint ---------------------------------------------------------

def test_checkpoint_round_trip_byte_identical():
    rng = np.random.default_rng(17)
    st = random_state(rng)
    text = dump_checkpoint(st, ["a", "b"], rng, {"note": 1})
    back, doc = load_checkpoint(text)
    assert dump_checkpoint(back, doc["nodes"], restore_rng(doc["rng"]), {"note": doc["note"]}) == text
    assert restore_rng(doc["rng"]).random() == rng.random()
    back.check_invariants()
    assert total_predictive_mass(back) == pytest.approx(total_predictive_mass(st), abs=1e-15)


def test_checkpoint_rejects_foreign_documents():
    with pytest.raises(ValueError):
        load_checkpoint('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint('{"format": "%s", "version": 99}' % mdnd.CHECKPOINT_FORMAT)
