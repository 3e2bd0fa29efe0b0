import numpy as np
import pytest

from dyference.graph import Cascade, CascadeSet, NodeTable

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_cascades(*times, n_nodes=None):
    """CascadeSet from dicts of node -> time; ids c0, c1, ..."""
    cascades = tuple(Cascade(f"c{i}", t) for i, t in enumerate(times))
    if n_nodes is None:
        n_nodes = 1 + max(u for t in times for u in t)
    return CascadeSet(cascades, NodeTable.of_size(n_nodes))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_state(rng, n_nodes=8, n_obs=30, hyper=None):
    """An MdndState grown by seating random edges from their cluster conditionals."""
    from dyference import mdnd

    if hyper is None:
        hyper = mdnd.Hyperparams(*rng.uniform(0.2, 3.0, 3))
    st = mdnd.MdndState(hyper)
    for _ in range(n_obs):
        u, v = rng.choice(n_nodes, 2, replace=False).tolist()
        st.register_node(u, rng)
        st.register_node(v, rng)
        p = mdnd.cluster_conditional(st, u, v)
        mdnd.add_observation(st, (u, v), int(rng.choice(len(p), p=p)), rng)
    mdnd.resample_all_tables(st, rng)
    mdnd.sample_beta(st, rng)
    return st
