import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgas import autodiff as ad
from sgas.autodiff import Tensor
from sgas.supernet import (DETERMINED, PRUNED, UNDETERMINED, CellTopology, Genotype, Operation,
                           OperationSet, SearchSpaceError, SuperNetwork, derive_genotype,
                           instantiate_standalone, toy_operation_set)

OPS = toy_operation_set(8).names


# independent numpy reference for each op
def np_op(name, x, p):
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    if name == "zero":
        return np.zeros_like(x)
    if name == "identity":
        return x
    if name == "linear":
        return x @ p["W"] + p["b"]
    if name == "relu_linear":
        return np.maximum(x, 0) @ p["W"] + p["b"]
    if name == "gated_linear":
        return x * sig(x @ p["W"] + p["b"])
    if name == "bottleneck_linear":
        return np.maximum(x @ p["W1"] + p["b1"], 0) @ p["W2"] + p["b2"]
    raise KeyError(name)


def np_network(net, X):
    """Reference forward pass that reads weights and alphas but not the op closures."""
    names = net.ops.names
    data = lambda d: {k: v.data for k, v in d.items()}
    s = X @ net.stem["W"].data + net.stem["b"].data
    pp, p = s, s
    for c in range(net.n_cells):
        states = [pp, p]
        for j in net.topology.intermediate_nodes:
            acc = np.zeros_like(p)
            for e in net.topology.incoming(j):
                st_ = net.alphas.status[e]
                if st_ == PRUNED:
                    continue
                ew = net.edge_weights[c][e]
                x = states[e[0]]
                if st_ == DETERMINED:
                    o = net.alphas.chosen[e]
                    acc = acc + np_op(names[o], x, data(ew[o]))
                else:
                    a = net.alphas.row(e)
                    w = np.exp(a - a.max())
                    w /= w.sum()
                    acc = acc + sum(w[o] * np_op(names[o], x, data(ew[o])) for o in range(len(names)))
            states.append(acc)
        out = np.concatenate(states[2:], axis=1) @ net.proj[c]["W"].data + net.proj[c]["b"].data
        pp, p = p, out
    return p @ net.head["W"].data + net.head["b"].data


def zero_identity_net(alpha=(0.0, 0.0)):
    ops = toy_operation_set(2)
    small = OperationSet(ops.ops[:2], 0, 2)
    net = SuperNetwork(2, 2, width=2, cells=1, n_intermediate=1, ops=small)
    net.alphas.rows[(0, 2)].data = np.array(alpha)
    return net


def test_edge_count_and_order():
    topo = CellTopology(4)
    assert len(topo.edges) == 14
    assert topo.edges[:3] == [(0, 2), (1, 2), (0, 3)]
    assert topo.incoming(5) == [(0, 5), (1, 5), (2, 5), (3, 5), (4, 5)]


def test_op_set_order_and_sizes():
    ops = toy_operation_set(8)
    assert ops.names == ["zero", "identity", "linear", "relu_linear", "gated_linear", "bottleneck_linear"]
    assert [op.num_parameters for op in ops] == [0, 0, 72, 72, 72, 8 * 4 + 4 + 4 * 8 + 8]
    with pytest.raises(SearchSpaceError):
        toy_operation_set(1)


def test_op_set_requires_single_zero():
    ops = toy_operation_set(4)
    with pytest.raises(SearchSpaceError):
        OperationSet(ops.ops[1:], 0, 4)


def test_mixed_edge_uniform_zero_identity_halves_input():
    net = zero_identity_net()
    out = net.mixed_edge_forward(0, (0, 2), Tensor([[2.0, -4.0]]))
    np.testing.assert_allclose(out.data, [[1.0, -2.0]], atol=1e-15)


def test_mixed_edge_tends_to_identity():
    net = zero_identity_net((0.0, 50.0))
    x = np.array([[2.0, -4.0]])
    np.testing.assert_allclose(net.mixed_edge_forward(0, (0, 2), Tensor(x)).data, x, rtol=1e-20, atol=1e-20)


def test_mixed_edge_matches_direct_sum(rng):
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=2, seed=3)
    e = (1, 3)
    net.alphas.rows[e].data = rng.standard_normal(6)
    x = rng.standard_normal((5, 8))
    a = net.alphas.row(e)
    w = np.exp(a) / np.exp(a).sum()
    expected = sum(w[o] * np_op(OPS[o], x, {k: v.data for k, v in net.edge_weights[0][e][o].items()})
                   for o in range(6))
    np.testing.assert_allclose(net.mixed_edge_forward(0, e, Tensor(x)).data, expected, atol=1e-12)


def test_determined_edge_is_limit_of_mixed(rng):
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=2, seed=4)
    e, chosen = (0, 2), 4
    row = np.zeros(6)
    row[chosen] = 60.0
    net.alphas.rows[e].data = row
    x = Tensor(rng.standard_normal((5, 8)))
    mixed = net.mixed_edge_forward(0, e, x).data
    net.alphas.determine(e, chosen)
    np.testing.assert_allclose(net.determined_edge_forward(0, e, x).data, mixed, rtol=1e-12, atol=1e-12)
    with pytest.raises(SearchSpaceError):
        net.mixed_edge_forward(0, e, x)


def test_cell_with_all_zero_edges_outputs_projection_bias(rng):
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=4, seed=5)
    for e in net.topology.edges:
        net.alphas.determine(e, net.ops.zero_index)
    net.proj[0]["b"].data = rng.standard_normal(8)
    x = Tensor(rng.standard_normal((4, 8)))
    out = net.cell_forward(0, x, x).data
    np.testing.assert_allclose(out, np.tile(net.proj[0]["b"].data, (4, 1)), atol=0)


def test_single_identity_edge_cell(rng):
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=1, seed=6)
    net.alphas.determine((0, 2), net.ops.index("identity"))
    net.alphas.prune((1, 2))
    pp, p = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    out = net.cell_forward(0, Tensor(pp), Tensor(p)).data
    np.testing.assert_allclose(out, pp @ net.proj[0]["W"].data + net.proj[0]["b"].data, atol=1e-14)


def test_cell_width_mismatch_raises():
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=1)
    with pytest.raises(ad.ShapeError):
        net.cell_forward(0, Tensor(np.ones((1, 8))), Tensor(np.ones((1, 7))))


@pytest.mark.parametrize("seed", range(5))
def test_supernet_matches_numpy_reference(seed):
    rng = np.random.default_rng(seed)
    net = SuperNetwork(5, 3, width=8, cells=3, n_intermediate=4, seed=seed)
    for e in net.topology.edges:
        net.alphas.rows[e].data = rng.standard_normal(6)
    net.alphas.determine((0, 2), 3)
    net.alphas.prune((2, 4))
    X = rng.standard_normal((6, 5))
    np.testing.assert_allclose(net.forward(X).data, np_network(net, X), atol=1e-12)


def brute_force_darts(net):
    """Enumerate edge pairs and ops per node; keep the pair with the largest summed best weight."""
    nodes = []
    for j in net.topology.intermediate_nodes:
        best = None
        for pair in itertools.combinations(net.topology.incoming(j), 2):
            picks = []
            for e in pair:
                w = ad.softmax_array(net.alphas.row(e))
                o = max(range(1, 6), key=lambda k: w[k])
                picks.append((w[o], e[0], OPS[o]))
            total = sum(p[0] for p in picks)
            if best is None or total > best[0]:
                best = (total, sorted((i, op) for _, i, op in picks))
        nodes.append(best[1])
    return nodes


@pytest.mark.parametrize("seed", range(10))
def test_derive_genotype_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=4)
    for e in net.topology.edges:
        row = rng.standard_normal(6)
        row[0] += 3.0  # zero op dominant: must still never be selected
        net.alphas.rows[e].data = row
    g = derive_genotype(net.alphas, net.ops, 1)
    assert g.nodes == brute_force_darts(net)
    assert all(op != "zero" for pairs in g.nodes for _, op in pairs)


def test_derive_genotype_keeps_determined_edges():
    net = SuperNetwork(3, 2, width=8, cells=1, n_intermediate=2)
    net.alphas.determine((1, 3), 1)
    net.alphas.prune((0, 3))
    g = derive_genotype(net.alphas, net.ops, 1)
    assert (1, "identity") in g.nodes[1]
    assert all(i != 0 for i, _ in g.nodes[1])


def all_identity(m=4):
    return Genotype([[(0, "identity"), (1, "identity")] for _ in range(m)], width=8, cells=2)


def test_all_identity_standalone_param_count():
    net = instantiate_standalone(all_identity(), 5, 3)
    expected = (5 * 8 + 8) + 2 * (4 * 8 * 8 + 8) + (8 * 3 + 3)
    assert net.num_parameters() == expected
    assert net.alpha_parameters() == []
    assert net.forward(np.zeros((7, 5))).shape == (7, 3)


def test_standalone_param_count_by_enumeration():
    g = Genotype([[(0, "linear"), (1, "bottleneck_linear")], [(2, "gated_linear"), (0, "identity")]],
                 width=8, cells=3)
    net = instantiate_standalone(g, 4, 2)
    ops = toy_operation_set(8)
    per_cell = sum(ops[ops.index(op)].num_parameters for pairs in g.nodes for _, op in pairs)
    per_cell += 2 * 8 * 8 + 8
    assert net.num_parameters() == (4 * 8 + 8) + 3 * per_cell + (8 * 2 + 2)
    assert net.alphas.counts() == {UNDETERMINED: 0, DETERMINED: 4, PRUNED: 1}


def test_standalone_respects_overrides():
    net = instantiate_standalone(all_identity(2), 4, 2, cells=1, width=4)
    assert net.n_cells == 1 and net.width == 4


def test_genotype_validation():
    with pytest.raises(SearchSpaceError):
        Genotype([[(0, "identity")]])
    with pytest.raises(SearchSpaceError):
        Genotype([[(0, "identity"), (0, "linear")]])
    with pytest.raises(SearchSpaceError):
        Genotype([[(0, "identity"), (2, "linear")]])
    with pytest.raises(SearchSpaceError):
        Genotype([[(0, "zero"), (1, "linear")]])
    with pytest.raises(SearchSpaceError):
        Genotype.from_json("{not json")
    with pytest.raises(SearchSpaceError):
        Genotype.from_dict({"nodes": [[{"op": "linear"}]]})


genotypes = st.builds(
    lambda choices, cells: Genotype(
        [[(i, OPS[1 + o]) for i, o in pick] for pick in choices], width=8, cells=cells),
    st.tuples(*[st.lists(st.tuples(st.integers(0, j - 1), st.integers(0, 4)), min_size=2, max_size=2,
                         unique_by=lambda t: t[0]) for j in range(2, 6)]),
    st.integers(1, 3),
)


@settings(max_examples=25, deadline=None)
@given(genotypes)
def test_genotype_round_trip(g):
    again = Genotype.from_json(g.to_json())
    assert again == g
    assert again.to_json() == g.to_json()
    a = instantiate_standalone(g, 4, 3, seed=9)
    b = instantiate_standalone(again, 4, 3, seed=9)
    assert a.num_parameters() == b.num_parameters()
    X = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(a.forward(X).data, b.forward(X).data)


def test_genotype_json_shape():
    d = json.loads(all_identity(1).to_json())
    assert d == {"cells": 2, "meta": {}, "nodes": [[{"from": 0, "op": "identity"}, {"from": 1, "op": "identity"}]],
                 "width": 8}


def test_dot_export():
    dot = Genotype([[(0, "linear"), (1, "identity")], [(2, "relu_linear"), (0, "gated_linear")]]).to_dot()
    assert dot.startswith("digraph cell {")
    assert '"c_{k-2}" -> "0" [label="linear"];' in dot
    assert '"0" -> "1" [label="relu_linear"];' in dot
    assert dot.count("-> \"c_{k}\"") == 2
    assert dot.rstrip().endswith("}")


def test_pruning_only_touches_its_edge_across_cells(rng):
    one = SuperNetwork(4, 2, width=8, cells=1, n_intermediate=2, seed=11)
    two = SuperNetwork(4, 2, width=8, cells=2, n_intermediate=2, seed=11)
    for e in one.topology.edges:
        row = rng.standard_normal(6)
        one.alphas.rows[e].data = row.copy()
        two.alphas.rows[e].data = row.copy()
    X = Tensor(rng.standard_normal((3, 4)))
    stem = lambda n: ad.affine(X, n.stem["W"], n.stem["b"])
    s1, s2 = stem(one), stem(two)
    np.testing.assert_array_equal(one.cell_forward(0, s1, s1).data, two.cell_forward(0, s2, s2).data)
    before_unaffected = two.mixed_edge_forward(1, (0, 2), s2).data
    for net in (one, two):
        net.alphas.prune((1, 3))
        net.drop_ops((1, 3))
    np.testing.assert_array_equal(one.cell_forward(0, s1, s1).data, two.cell_forward(0, s2, s2).data)
    np.testing.assert_array_equal(two.mixed_edge_forward(1, (0, 2), s2).data, before_unaffected)


def test_drop_ops_removes_weights_in_every_cell():
    net = SuperNetwork(4, 2, width=8, cells=3, n_intermediate=2)
    before = net.num_parameters()
    removed = net.drop_ops((0, 2), keep=2)
    ops = toy_operation_set(8)
    freed = 3 * sum(op.num_parameters for k, op in enumerate(ops) if k != 2)
    assert before - net.num_parameters() == freed
    assert all(".0-2." in n for n in removed)
    assert all(list(net.edge_weights[c][(0, 2)]) == [2] for c in range(3))


def test_alpha_table_status_transitions():
    net = SuperNetwork(4, 2, width=8, cells=1, n_intermediate=2)
    t = net.alphas
    t.determine((0, 2), 1)
    with pytest.raises(SearchSpaceError):
        t.prune((0, 2))
    assert not t.rows[(0, 2)].requires_grad
    assert t.num_parameters() == 6 * (len(t.edges) - 1)


def test_state_dict_round_trip():
    a = SuperNetwork(4, 2, width=8, cells=2, n_intermediate=2, seed=1)
    b = SuperNetwork(4, 2, width=8, cells=2, n_intermediate=2, seed=2)
    b.load_state_dict(a.state_dict())
    X = np.ones((2, 4))
    np.testing.assert_array_equal(a.forward(X).data, b.forward(X).data)


def test_forward_feature_mismatch():
    with pytest.raises(ad.ShapeError):
        SuperNetwork(4, 2, width=8, cells=1, n_intermediate=1).forward(np.ones((2, 5)))


@pytest.mark.parametrize("seed", range(3))
def test_supernet_gradients(seed):
    net = SuperNetwork(3, 2, width=4, cells=1, n_intermediate=2, seed=seed)
    rng = np.random.default_rng(seed)
    for e in net.topology.edges:
        net.alphas.rows[e].data = rng.standard_normal(6)
    X = rng.standard_normal((3, 3))
    y = np.array([0, 1, 1])
    params = net.alpha_parameters() + [net.proj[0]["W"], net.edge_weights[0][(1, 3)][4]["W"]]
    report = ad.grad_check(lambda ps: ad.cross_entropy(net.forward(X), y), params)
    assert report.passed, report
