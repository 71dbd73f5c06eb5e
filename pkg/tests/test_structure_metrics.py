import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from spclt import structure_metrics as sm
from spclt.dataio import Dataset, ReprSet
from spclt.errors import ConfigurationError


# -- brute-force oracles: explicit loops over every point and neighbour -------
def ranks(D, i):
    """rank[j] for j != i, 1 = nearest, ties by index."""
    others = sorted((D[i, j], j) for j in range(len(D)) if j != i)
    return {j: r for r, (_, j) in enumerate(others, start=1)}


def b_knn(DX, DZ, k):
    n = len(DX)
    tot = 0
    for i in range(n):
        rx, rz = ranks(DX, i), ranks(DZ, i)
        nx = {j for j, r in rx.items() if r <= k}
        nz = {j for j, r in rz.items() if r <= k}
        tot += len(nx & nz)
    return tot / (n * k)


def b_trust(DX, DZ, k):
    n = len(DX)
    pen = 0
    for i in range(n):
        rx, rz = ranks(DX, i), ranks(DZ, i)
        for j in range(n):
            if j != i and rz[j] <= k and rx[j] > k:
                pen += rx[j] - k
    return 1 - 2 / (n * k * (2 * n - 3 * k - 1)) * pen


def b_mrre(DX, DZ, k):
    n = len(DX)
    zx = xz = 0.0
    for i in range(n):
        rx, rz = ranks(DX, i), ranks(DZ, i)
        for j in range(n):
            if j == i:
                continue
            if rz[j] <= k:
                zx += abs(rx[j] - rz[j]) / rz[j]
            if rx[j] <= k:
                xz += abs(rx[j] - rz[j]) / rx[j]
    # worst case: each reference rank r paired with the farthest attainable rank
    c = n * sum(max(abs(q - r) for q in range(1, n)) / r for r in range(1, k + 1))
    return 0.5 * (zx + xz) / c


def b_drmse(DX, DZ):
    n = len(DX)
    mx = max(DX[i, j] for i in range(n) for j in range(n) if i != j)
    mz = max(DZ[i, j] for i in range(n) for j in range(n) if i != j)
    sq = [(DX[i, j] / mx - DZ[i, j] / mz) ** 2 for i in range(n) for j in range(i + 1, n)]
    return (sum(sq) / len(sq)) ** 0.5


def rand_pair(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    DX = squareform(pdist(rng.standard_normal((n, 3))))
    DZ = squareform(pdist(rng.standard_normal((n, 2))))
    k = int(rng.integers(1, sm.max_valid_k(n) + 1))
    return DX, DZ, k


@pytest.mark.parametrize("seed", range(50))
def test_metrics_equal_brute_force(seed):
    DX, DZ, k = rand_pair(seed)
    assert sm.knn_overlap(DX, DZ, k) == b_knn(DX, DZ, k)
    assert sm.trustworthiness(DX, DZ, k) == b_trust(DX, DZ, k)
    assert sm.continuity(DX, DZ, k) == b_trust(DZ, DX, k)
    assert sm.mrre(DX, DZ, k) == pytest.approx(b_mrre(DX, DZ, k), abs=1e-15)
    assert sm.drmse(DX, DZ) == pytest.approx(b_drmse(DX, DZ), abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_ranges_and_duality(seed):
    DX, DZ, k = rand_pair(seed)
    assert sm.continuity(DX, DZ, k) == sm.trustworthiness(DZ, DX, k)
    assert sm.mrre(DX, DZ, k) == pytest.approx(sm.mrre(DZ, DX, k), abs=1e-15)
    for v in (sm.knn_overlap(DX, DZ, k), sm.trustworthiness(DX, DZ, k), sm.continuity(DX, DZ, k),
              sm.mrre(DX, DZ, k)):
        assert 0.0 <= v <= 1.0
    assert sm.drmse(DX, DZ) >= 0


def test_identity_scores_are_optimal():
    D = squareform(pdist(np.random.default_rng(0).standard_normal((9, 3))))
    r = sm.report(D, D, 3, "global")
    assert r.as_tuple() == (1.0, 1.0, 1.0, 0.0, 0.0)


def test_worst_case_trust_is_zero_at_largest_k():
    # latent neighbours are exactly the farthest original points
    n = 9
    for k in range(1, sm.max_valid_k(n) + 1):
        x = np.arange(n, dtype=float)[:, None]
        DX = squareform(pdist(x))
        assert 0.0 <= sm.trustworthiness(DX, squareform(pdist(np.random.default_rng(k).permutation(x))), k) <= 1.0


def test_reversed_collinear_points():
    x = np.arange(4.0)[:, None]
    DX = squareform(pdist(x))
    DZ = squareform(pdist(x[::-1].copy()))
    assert sm.knn_overlap(DX, DZ, 1) == b_knn(DX, DZ, 1)


def test_drmse_scale_invariant_and_hand_fixture():
    DX = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    assert sm.drmse(DX, 4.0 * DX) == 0.0
    DZ = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    # normalised upper triangles (1/3, 2/3, 1) vs (1, 1, 1)
    expected = np.sqrt(((2 / 3) ** 2 + (1 / 3) ** 2 + 0) / 3)
    assert sm.drmse(DX, DZ) == pytest.approx(expected, abs=1e-15)


def test_drmse_zero_matrix_left_unscaled():
    DX = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    Z = np.zeros((3, 3))
    assert sm.drmse(DX, Z) == pytest.approx(np.sqrt(np.mean(np.array([1, 2, 3]) ** 2 / 9)))


def test_rigid_motion_invariance():
    rng = np.random.default_rng(1)
    x, z = rng.standard_normal((10, 3)), rng.standard_normal((10, 2))
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    DX = squareform(pdist(x))
    a = sm.report(DX, squareform(pdist(z)), 3, "g").as_tuple()
    b = sm.report(DX, squareform(pdist(z @ q + 5.0)), 3, "g").as_tuple()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_k_validation():
    D = squareform(pdist(np.random.default_rng(2).standard_normal((6, 2))))
    with pytest.raises(ConfigurationError):
        sm.knn_overlap(D, D, 6)
    with pytest.raises(ConfigurationError):
        sm.trustworthiness(D, D, 4)  # 2n - 3k - 1 = -1
    assert sm.max_valid_k(6) == 2
    sm.trustworthiness(D, D, 3)  # accepted, though outside the clamped range


def test_evaluate_identity_encoder_is_optimal():
    rng = np.random.default_rng(3)
    ds = Dataset("x", rng.standard_normal((8, 10, 2)))
    # flattening timestamps into the instance vector keeps global distances
    reps = np.zeros((8, 10, 20))
    for t in range(10):
        reps[:, t, :] = -1e3
        reps[:, t, 2 * t:2 * t + 2] = ds.data[:, t]
    pad = np.concatenate([ds.data, np.zeros((8, 10, 18))], axis=2)
    loc, _ = sm.evaluate(ds, ReprSet(pad))
    assert loc.as_tuple() == pytest.approx((1, 1, 1, 0, 0), abs=1e-6)
    inst = ReprSet(np.repeat(ds.data.reshape(8, 1, 20), 10, axis=1))
    _, glob = sm.evaluate(ds, inst)
    assert glob.as_tuple() == pytest.approx((1, 1, 1, 0, 0), abs=1e-6)


def test_shuffled_representations_hit_null_band():
    rng = np.random.default_rng(4)
    n, k = 40, 5
    x = rng.standard_normal((n, 3))
    DX = squareform(pdist(x))
    vals = [sm.knn_overlap(DX, squareform(pdist(x[rng.permutation(n)])), k) for _ in range(100)]
    expected = k / (n - 1)
    assert abs(np.mean(vals) - expected) < 0.03


def test_local_aggregate_caps_at_500():
    ds = Dataset("x", np.random.default_rng(5).standard_normal((600, 3, 1)))
    loc, glob = sm.evaluate(ds, ReprSet(ds.data), k=1)
    assert loc.n_samples == 500
    assert glob.n_samples == 600


def test_evaluate_clamps_k_and_checks_shapes():
    ds = Dataset("x", np.random.default_rng(6).standard_normal((5, 4, 1)))
    loc, glob = sm.evaluate(ds, ReprSet(ds.data))
    assert loc.k == sm.max_valid_k(4) and glob.k == sm.max_valid_k(5)
    with pytest.raises(ConfigurationError):
        sm.evaluate(ds, ReprSet(np.zeros((4, 4, 1))))
