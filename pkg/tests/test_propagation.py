import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hcts.diffengine import fd_check
from hcts.errors import UsageError
from hcts.propagation import Adjacency, propagate, skip_gcn_layer

from conftest import seeds, toy_graph


def dense_reference(u0, i0, edges, nu, ni, layers):
    """Loop-based oracle: explicit neighbor means, sum of layers 1..L."""
    nbr_u = {u: [i for a, i in edges if a == u] for u in range(nu)}
    nbr_i = {i: [u for u, b in edges if b == i] for i in range(ni)}
    u, it = np.array(u0, dtype=float), np.array(i0, dtype=float)
    su, si = np.zeros_like(u), np.zeros_like(it)
    for _ in range(layers):
        nu_, ni_ = u.copy(), it.copy()
        for a in range(nu):
            if nbr_u[a]:
                nu_[a] = u[a] + it[nbr_u[a]].mean(0)
        for b in range(ni):
            if nbr_i[b]:
                ni_[b] = it[b] + u[nbr_i[b]].mean(0)
        u, it = nu_, ni_
        su += u
        si += it
    return su, si


def t(a):
    return torch.tensor(a, dtype=torch.float64)


def test_isolated_user_passes_through():
    g = toy_graph([(1, 0)], 2, 1)
    u, i = skip_gcn_layer(t([[1.0, 2.0], [0.0, 0.0]]), t([[3.0, 3.0]]), g)
    assert u[0].tolist() == [1.0, 2.0]


def test_hand_layer():
    g = toy_graph([(0, 0), (0, 1)], 1, 2)
    u, _ = skip_gcn_layer(t([[1.0, 1.0]]), t([[1.0, 0.0], [0.0, 1.0]]), g)
    assert u[0].tolist() == [1.5, 1.5]


def test_simultaneous_update():
    g = toy_graph([(0, 0)], 1, 1)
    u, i = skip_gcn_layer(t([[1.0]]), t([[10.0]]), g)
    # item reads the layer-l user (1), not the updated one (11)
    assert (u.item(), i.item()) == (11.0, 11.0)


def test_shape_errors():
    g = toy_graph([(0, 0)], 1, 1)
    with pytest.raises(UsageError):
        skip_gcn_layer(t([[1.0], [2.0]]), t([[1.0]]), g)
    with pytest.raises(UsageError):
        skip_gcn_layer(t([[1.0]]), t([[1.0, 2.0]]), g)
    with pytest.raises(UsageError):
        propagate(t([[1.0]]), t([[1.0]]), g, layers=0)


def test_one_layer_equals_layer():
    g = toy_graph([(0, 0), (1, 0), (1, 1)], 2, 2)
    u0, i0 = t([[1.0, 0.0], [0.0, 2.0]]), t([[3.0, 1.0], [-1.0, 1.0]])
    a = propagate(u0, i0, g, 1)
    b = skip_gcn_layer(u0, i0, g)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_isolated_graph_telescopes():
    g = toy_graph([], 2, 3)
    u0, i0 = t([[1.0, 2.0], [3.0, 4.0]]), t(np.ones((3, 2)))
    u, i = propagate(u0, i0, g, 4)
    assert torch.equal(u, 4 * u0) and torch.equal(i, 4 * i0)


def test_two_layer_hand_table():
    # 1 user, 2 items, unit embeddings
    g = toy_graph([(0, 0), (0, 1)], 1, 2)
    u, i = propagate(t([[1.0]]), t([[1.0], [1.0]]), g, 2)
    # layer 1: u=2, i=(2,2); layer 2: u=4, i=(4,4); sums: u=6, i=(6,6)
    assert u.tolist() == [[6.0]] and i.tolist() == [[6.0], [6.0]]


@given(seeds, st.integers(1, 4))
def test_matches_dense_oracle(seed, layers):
    rng = np.random.default_rng(seed)
    nu, ni = 5, 6
    edges = sorted({(int(a), int(b)) for a, b in zip(rng.integers(0, nu, 12), rng.integers(0, ni, 12))})
    u0, i0 = rng.standard_normal((nu, 3)), rng.standard_normal((ni, 3))
    u, i = propagate(t(u0), t(i0), toy_graph(edges, nu, ni), layers)
    ru, ri = dense_reference(u0, i0, edges, nu, ni, layers)
    np.testing.assert_allclose(u.numpy(), ru, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(i.numpy(), ri, rtol=1e-12, atol=1e-12)


@given(seeds, st.floats(-5, 5))
def test_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    g = toy_graph([(0, 1), (1, 1), (2, 0), (2, 2)], 3, 3)
    u0, i0 = t(rng.standard_normal((3, 2))), t(rng.standard_normal((3, 2)))
    a = propagate(alpha * u0, alpha * i0, g, 3)
    b = propagate(u0, i0, g, 3)
    np.testing.assert_allclose(a[0].numpy(), alpha * b[0].numpy(), atol=1e-10)
    np.testing.assert_allclose(a[1].numpy(), alpha * b[1].numpy(), atol=1e-10)


def test_permutation_equivariance(rng):
    edges = [(0, 1), (1, 1), (2, 0), (2, 2), (1, 3)]
    u0, i0 = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    pu, pi = np.array([2, 0, 1]), np.array([3, 1, 0, 2])  # new index of old node
    moved = [(int(pu[a]), int(pi[b])) for a, b in edges]
    u_new, i_new = np.empty_like(u0), np.empty_like(i0)
    u_new[pu], i_new[pi] = u0, i0
    a = propagate(t(u0), t(i0), toy_graph(edges, 3, 4), 3)
    b = propagate(t(u_new), t(i_new), toy_graph(moved, 3, 4), 3)
    np.testing.assert_allclose(b[0].numpy()[pu], a[0].numpy(), atol=1e-12)
    np.testing.assert_allclose(b[1].numpy()[pi], a[1].numpy(), atol=1e-12)


def test_gradient_reaches_inputs(rng):
    g = Adjacency.from_graph(toy_graph([(0, 0), (0, 1), (1, 1)], 2, 2))
    u0 = torch.tensor(rng.standard_normal((2, 2)), requires_grad=True)
    i0 = torch.tensor(rng.standard_normal((2, 2)), requires_grad=True)
    obj = lambda: sum((x ** 2).sum() for x in propagate(u0, i0, g, 3))
    assert fd_check(obj, {"u0": u0, "i0": i0}) <= 1e-6
