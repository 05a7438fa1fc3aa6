import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import compact_by_bfs, dsep_table, random_dag
from fansrl.errors import ContractViolation
from fansrl.graph import (MASK_NAMES, Dag, FnMdpGraph, compact_representation, d_separated,
                          random_fnmdp_graph, shd, unroll)


def test_unroll_node_count():
    assert unroll(FnMdpGraph.full(1, 1, 1, 1), 2).n == 10


@pytest.mark.parametrize("T", [2, 5])
def test_unroll_node_count_formula(T):
    g = random_fnmdp_graph(1, 3, 2, 2, 1, 0.5)
    assert unroll(g, T).n == T * (3 + 2 + 2 + 1 + 1)


def test_unroll_empty_masks_keep_only_reward_factor_edges():
    u = unroll(FnMdpGraph.empty(2, 1, 1, 2), 3)
    kinds = {(u.locate(a)[0], u.locate(b)[0]) for a, b in u.edges}
    assert kinds == {("theta_r", "r")}
    assert len(u.edges) == 3 * 2


def test_unroll_short_horizon():
    with pytest.raises(ContractViolation):
        unroll(FnMdpGraph.full(1, 1, 1, 1), 1)


@pytest.mark.parametrize("seed", range(10))
def test_unroll_edge_counts_per_entry(seed):
    g = random_fnmdp_graph(seed, 3, 2, 2, 2, 0.5)
    T = 4
    u = unroll(g, T)
    # count edges per (parent kind/index, child kind/index) pair by direct enumeration
    counts = {}
    for a, b in u.edges:
        ka, ia, ta = u.locate(a)
        kb, ib, tb = u.locate(b)
        lag = tb - ta
        assert lag in (0, 1)
        if lag == 0:
            assert (ka, kb) in {("theta_s", "s"), ("theta_r", "r")}
        counts[(ka, ia, kb, ib)] = counts.get((ka, ia, kb, ib), 0) + 1
    expected = {}
    for i, j in zip(*np.nonzero(g.Css)):
        expected[("s", j, "s", i)] = T - 1
    for i, j in zip(*np.nonzero(g.Cas)):
        expected[("a", j, "s", i)] = T - 1
    for i, k in zip(*np.nonzero(g.Cts)):
        expected[("theta_s", k, "s", i)] = T
    for j in np.flatnonzero(g.csr):
        expected[("s", j, "r", 0)] = T - 1
    for j in np.flatnonzero(g.car):
        expected[("a", j, "r", 0)] = T - 1
    for k, k2 in zip(*np.nonzero(g.Ctt_s)):
        expected[("theta_s", k2, "theta_s", k)] = T - 1
    for l, l2 in zip(*np.nonzero(g.Ctt_r)):
        expected[("theta_r", l2, "theta_r", l)] = T - 1
    for l in range(g.q):
        expected[("theta_r", l, "r", 0)] = T
    assert counts == expected


def test_unroll_actions_have_no_parents():
    u = unroll(FnMdpGraph.full(2, 2, 1, 1), 3)
    for t in range(3):
        for v in u.nodes("a", t):
            assert len(u.parents(v)) == 0


def test_unroll_deterministic_order():
    g = random_fnmdp_graph(3, 2, 1, 1, 1, 0.7)
    assert np.array_equal(unroll(g, 4).edges, unroll(g, 4).edges)
    assert unroll(g, 4).names == unroll(g, 4).names


# ---- d-separation ----------------------------------------------------------

def test_chain():
    g = Dag(3, [(0, 1), (1, 2)])
    assert d_separated(g, {0}, {2}, {1})
    assert not d_separated(g, {0}, {2}, set())


def test_collider():
    g = Dag(3, [(0, 1), (2, 1)])
    assert d_separated(g, {0}, {2}, set())
    assert not d_separated(g, {0}, {2}, {1})


def test_collider_descendant_opens():
    g = Dag(4, [(0, 1), (2, 1), (1, 3)])
    assert not d_separated(g, {0}, {2}, {3})


def test_fork():
    g = Dag(3, [(1, 0), (1, 2)])
    assert not d_separated(g, {0}, {2})
    assert d_separated(g, {0}, {2}, {1})


def test_overlapping_sets_rejected():
    g = Dag(3, [(0, 1), (1, 2)])
    with pytest.raises(ContractViolation):
        d_separated(g, {0}, {2}, {0})
    with pytest.raises(ContractViolation):
        d_separated(g, {0, 1}, {1}, set())


def test_cycle_rejected():
    with pytest.raises(ContractViolation):
        Dag(3, [(0, 1), (1, 2), (2, 0)])


def test_dsep_matches_path_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        dag = random_dag(rng)
        for x in range(dag.n):
            for y in range(dag.n):
                if x == y:
                    continue
                table = dsep_table(dag, x, y)
                for z in range(1 << dag.n):
                    if z >> x & 1 or z >> y & 1:
                        continue
                    Z = [v for v in range(dag.n) if z >> v & 1]
                    assert d_separated(dag, [x], [y], Z) == bool(table[z]), (dag.edges.tolist(), x, y, Z)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dsep_symmetric(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng)
    nodes = rng.permutation(dag.n)
    k = int(rng.integers(1, dag.n))
    X = set(nodes[:1].tolist())
    Y = set(nodes[1:1 + max(1, (dag.n - 1) // 2)].tolist())
    Z = set(nodes[1 + len(Y):1 + len(Y) + k].tolist())
    assert d_separated(dag, X, Y, Z) == d_separated(dag, Y, X, Z)


def test_dsep_set_queries_match_pairwise_union():
    # X ⊥ Y | Z for sets holds iff it holds for every member pair
    rng = np.random.default_rng(5)
    for _ in range(100):
        dag = random_dag(rng, n_min=4)
        nodes = rng.permutation(dag.n)
        X, Y, Z = {int(nodes[0]), int(nodes[1])}, {int(nodes[2])}, set(map(int, nodes[3:3 + rng.integers(0, 3)]))
        pairwise = all(d_separated(dag, {x}, {y}, Z) for x in X for y in Y)
        assert d_separated(dag, X, Y, Z) == pairwise


# ---- compact representation -----------------------------------------------

def test_compact_direct_and_one_hop():
    g = FnMdpGraph.empty(2, 1, 1, 1).replace(csr=np.array([1, 0]), Css=np.array([[0, 1], [0, 0]]))
    s_min, _ = compact_representation(g)
    assert s_min == (0, 1)


def test_compact_isolated_state_excluded():
    g = FnMdpGraph.empty(3, 1, 1, 1).replace(csr=np.array([1, 0, 0]), Css=np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]]))
    s_min, _ = compact_representation(g)
    assert s_min == (0, 1)


def test_compact_theta_paths():
    g = FnMdpGraph.empty(2, 1, 3, 2).replace(
        csr=np.array([1, 0]),
        Cts=np.array([[1, 0, 0], [0, 1, 0]]),
        Ctt_s=np.array([[0, 0, 1], [0, 0, 0], [0, 0, 0]]),
    )
    cr = compact_representation(g)
    assert cr.s_min == (0,)
    assert cr.theta_s_min == (0, 2)
    assert cr.theta_min == (0, 2, 3, 4)
    assert cr.policy_input_dim == 1 + 2 + 2


@pytest.mark.parametrize("seed", range(100))
def test_compact_matches_bfs(seed):
    rng = np.random.default_rng(seed)
    d, m, p, q = (int(v) for v in rng.integers(1, 7, size=4))
    g = random_fnmdp_graph(seed, d, m, p, q, float(rng.uniform(0.05, 0.6)))
    assert tuple(compact_representation(g)) == compact_by_bfs(g)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compact_monotone(seed):
    rng = np.random.default_rng(seed)
    d, m, p, q = (int(v) for v in rng.integers(1, 6, size=4))
    g = random_fnmdp_graph(seed, d, m, p, q, float(rng.uniform(0.05, 0.5)))
    name = MASK_NAMES[rng.integers(len(MASK_NAMES))]
    mask = g.masks()[name].copy()
    if mask.size == 0:
        return
    mask.flat[rng.integers(mask.size)] = 1
    bigger = g.replace(**{name: mask})
    a, b = compact_representation(g), compact_representation(bigger)
    assert set(a.s_min) <= set(b.s_min)
    assert set(a.theta_min) <= set(b.theta_min)


# ---- shd and sampling -------------------------------------------------------

def test_shd_identity_and_single_flip():
    g = random_fnmdp_graph(0, 3, 2, 2, 1, 0.5)
    assert shd(g, g) == 0
    css = g.Css.copy()
    css[1, 2] ^= 1
    assert shd(g, g.replace(Css=css)) == 1


def test_shd_equals_xor_count():
    rng = np.random.default_rng(0)
    for s in range(20):
        a = random_fnmdp_graph(s, 3, 2, 2, 2, rng.uniform(0.1, 1))
        b = random_fnmdp_graph(s + 1000, 3, 2, 2, 2, rng.uniform(0.1, 1))
        xor = sum(int(np.bitwise_xor(a.masks()[k], b.masks()[k]).sum()) for k in MASK_NAMES)
        assert shd(a, b) == xor


def test_shd_dimension_mismatch():
    with pytest.raises(ContractViolation):
        shd(FnMdpGraph.full(2, 1, 1, 1), FnMdpGraph.full(3, 1, 1, 1))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shd_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_fnmdp_graph(int(s), 3, 2, 2, 2, float(rng.uniform(0.1, 1))) for s in rng.integers(0, 2**31, 3))
    assert shd(a, b) == shd(b, a)
    assert shd(a, c) <= shd(a, b) + shd(b, c)
    assert (shd(a, b) == 0) == (a == b)


def test_random_graph_density_one_is_full():
    assert random_fnmdp_graph(3, 3, 2, 2, 2, 1.0) == FnMdpGraph.full(3, 2, 2, 2)


def test_random_graph_deterministic():
    assert random_fnmdp_graph(9, 4, 2, 2, 1, 0.3) == random_fnmdp_graph(9, 4, 2, 2, 1, 0.3)


def test_random_graph_fill_fraction():
    fill = np.mean([random_fnmdp_graph(s, 4, 1, 1, 1, 0.5).Css.mean() for s in range(1000)])
    assert abs(fill - 0.5) < 0.05


def test_random_graph_nondegenerate():
    for s in range(200):
        g = random_fnmdp_graph(s, 4, 1, 1, 1, 0.05)
        assert g.csr.any()
        assert (g.Css.any(axis=1) | g.Cas.any(axis=1) | g.Cts.any(axis=1)).all()


def test_random_graph_bad_density():
    with pytest.raises(ContractViolation):
        random_fnmdp_graph(0, 2, 1, 1, 1, 0.0)


def test_graph_rejects_non_binary():
    with pytest.raises(ContractViolation):
        FnMdpGraph.full(2, 1, 1, 1).replace(csr=np.array([2, 0]))


def test_graph_json_roundtrip(tmp_path):
    g = random_fnmdp_graph(4, 3, 2, 0, 2, 0.5)
    path = tmp_path / "g.json"
    g.save(path)
    doc = json.loads(path.read_text())
    assert doc["dims"] == {"d": 3, "m": 2, "p": 0, "q": 2}
    assert FnMdpGraph.load(path) == g


def test_graph_json_rejects_unknown_mask():
    doc = FnMdpGraph.full(1, 1, 1, 1).to_dict()
    doc["masks"]["Cxx"] = [1]
    with pytest.raises(ContractViolation):
        FnMdpGraph.from_dict(doc)


def test_dsep_kernel_backends_agree():
    from fansrl import kernels
    impls = kernels.backends()
    rng = np.random.default_rng(8)
    for _ in range(200):
        dag = random_dag(rng)
        z = (rng.random(dag.n) < 0.3).astype(np.uint8)
        src = np.zeros(dag.n, np.uint8)
        src[rng.integers(dag.n)] = 1
        z[src.astype(bool)] = 0
        outs = [np.asarray(k.dsep_reachable(dag.n, dag.pa_ptr, dag.pa_idx, dag.ch_ptr, dag.ch_idx, src, z))
                for k in impls.values()]
        for o in outs[1:]:
            assert np.array_equal(o, outs[0])
