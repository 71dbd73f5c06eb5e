import itertools

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from spclt import tensor as tn
from spclt.errors import ContractViolation
from spclt.topo_reg import pairwise_distances, persistence_pairing, topo_loss


def prufer_trees(n):
    """Every labelled spanning tree on n nodes, decoded from its Pruefer sequence."""
    if n == 1:
        yield frozenset()
        return
    if n == 2:
        yield frozenset({(0, 1)})
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        edges = []
        for v in seq:
            leaf = min(u for u in range(n) if degree[u] == 1)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[leaf] -= 1
            degree[v] -= 1
        u, w = [x for x in range(n) if degree[x] == 1]
        edges.append((u, w))
        yield frozenset(edges)


def brute_min_tree(A):
    best, best_w = None, np.inf
    for tree in prufer_trees(A.shape[0]):
        w = sum(A[i, j] for i, j in tree)
        if w < best_w:
            best, best_w = tree, w
    return best, best_w


def random_distances(rng, B, dim=3):
    return squareform(pdist(rng.standard_normal((B, dim))))


def test_prufer_counts():
    for n in range(2, 6):
        trees = set(prufer_trees(n))
        assert len(trees) == n ** (n - 2)
        assert all(len(t) == n - 1 for t in trees)


def test_two_points():
    assert persistence_pairing(np.array([[0.0, 3.0], [3.0, 0.0]])).edges == ((0, 1),)


def test_collinear_points():
    A = squareform(pdist(np.array([[0.0], [1.0], [3.0]])))
    p = persistence_pairing(A)
    assert set(p.edges) == {(0, 1), (1, 2)}
    assert sorted(A[p.index]) == [1.0, 2.0]


@pytest.mark.parametrize("B", [2, 3, 4, 5])
@pytest.mark.parametrize("seed", range(50))
def test_mst_equals_exhaustive_minimum(B, seed):
    A = random_distances(np.random.default_rng(seed), B)
    tree, w = brute_min_tree(A)
    p = persistence_pairing(A)
    assert len(p.edges) == B - 1
    assert frozenset(p.edges) == tree
    assert sum(A[i, j] for i, j in p.edges) == pytest.approx(w, rel=1e-12)


def test_ties_break_by_edge_index():
    A = np.ones((4, 4)) - np.eye(4)
    assert persistence_pairing(A).edges == ((0, 1), (0, 2), (0, 3))


def test_invalid_matrices():
    with pytest.raises(ContractViolation):
        persistence_pairing(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ContractViolation):
        persistence_pairing(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ContractViolation):
        topo_loss(np.zeros((3, 3)), np.zeros((2, 2)))


def oracle_topo(AX, AZ):
    tx, _ = brute_min_tree(AX)
    tz, _ = brute_min_tree(AZ)
    return 0.5 * sum((AX[e] - AZ[e]) ** 2 for e in tx) + 0.5 * sum((AZ[e] - AX[e]) ** 2 for e in tz)


def test_hand_fixture_is_two():
    AX = squareform(pdist(np.array([[0.0], [1.0], [3.0]])))
    AZ = squareform(pdist(np.array([[0.0], [2.0], [3.0]])))
    assert oracle_topo(AX, AZ) == pytest.approx(2.0, abs=1e-9)
    assert topo_loss(AX, AZ).item() == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(50))
def test_identical_matrices_give_zero(seed):
    A = random_distances(np.random.default_rng(seed), 6)
    assert topo_loss(A, A).item() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_matches_oracle_and_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    AX, AZ = random_distances(rng, 5), random_distances(rng, 5, 2)
    val = topo_loss(AX, AZ).item()
    assert val >= 0
    assert val == pytest.approx(oracle_topo(AX, AZ), rel=1e-12)
    p = rng.permutation(5)
    assert topo_loss(AX[np.ix_(p, p)], AZ[np.ix_(p, p)]).item() == pytest.approx(val, rel=1e-12)


def test_quadratic_in_scale_on_a_piece():
    rng = np.random.default_rng(3)
    AX, AZ = random_distances(rng, 5), random_distances(rng, 5)
    vals = [topo_loss(AX, AZ * c).item() for c in (0.9, 1.0, 1.1)]
    # scaling keeps the Z pairing, so three samples fix one parabola
    coef = np.polyfit([0.9, 1.0, 1.1], vals, 2)
    assert topo_loss(AX, AZ * 1.05).item() == pytest.approx(np.polyval(coef, 1.05), rel=1e-9)


def test_gradient_only_on_paired_entries():
    rng = np.random.default_rng(4)
    AX, AZ0 = random_distances(rng, 6), random_distances(rng, 6)
    AZ = tn.Tensor(AZ0, requires_grad=True)
    tn.backward(topo_loss(AX, AZ))
    paired = set(persistence_pairing(AX).edges) | set(persistence_pairing(AZ0).edges)
    mask = np.zeros((6, 6), dtype=bool)
    for i, j in paired:
        mask[i, j] = True
    assert np.all(AZ.grad[~mask] == 0)
    assert np.all(AZ.grad[mask] != 0)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_through_latent(seed):
    rng = np.random.default_rng(seed)
    AX = random_distances(rng, 4)
    z = rng.standard_normal((4, 3))
    assert tn.finite_diff_check(lambda t: topo_loss(AX, pairwise_distances(t)), z) < 1e-4


def test_pairwise_distances_match_scipy():
    z = np.random.default_rng(5).standard_normal((5, 3))
    np.testing.assert_allclose(pairwise_distances(z).data, squareform(pdist(z)), atol=1e-12)
