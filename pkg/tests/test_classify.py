import numpy as np
import pytest

from spclt.classify import knn_classify, knn_predict
from spclt.errors import ConfigurationError


def test_exact_match_k1():
    train = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    labels = np.array([0, 1, 2])
    np.testing.assert_array_equal(knn_predict(train, labels, train, 1), labels)


def test_separated_blobs_are_perfect():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 0.3, (20, 3))
    b = rng.normal(10, 0.3, (20, 3))
    train = np.vstack([a[:15], b[:15]])
    test = np.vstack([a[15:], b[15:]])
    rep = knn_classify(train, [0] * 15 + [1] * 15, test, [0] * 5 + [1] * 5, k=5)
    assert rep.accuracy == 1.0
    assert rep.macro_precision == rep.macro_recall == 1.0


def test_k_equals_m_votes_majority():
    train = np.array([[0.0], [1.0], [2.0], [10.0], [11.0]])
    labels = np.array([0, 0, 0, 1, 1])
    preds = knn_predict(train, labels, np.array([[10.5], [0.5]]), 5)
    np.testing.assert_array_equal(preds, [0, 0])


def test_vote_tie_goes_to_closer_class():
    train = np.array([[0.0], [3.0]])
    preds = knn_predict(train, np.array([1, 0]), np.array([[1.0], [2.0]]), 2)
    np.testing.assert_array_equal(preds, [1, 0])


def test_equal_distance_tie_goes_to_smaller_label():
    train = np.array([[-1.0], [1.0]])
    assert knn_predict(train, np.array([1, 0]), np.array([[0.0]]), 2)[0] == 0


def test_rotation_invariance():
    rng = np.random.default_rng(1)
    train, test = rng.standard_normal((30, 4)), rng.standard_normal((10, 4))
    labels = rng.integers(0, 3, 30)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    np.testing.assert_array_equal(knn_predict(train, labels, test, 3), knn_predict(train @ q, labels, test @ q, 3))


def test_precision_recall_by_hand():
    train = np.array([[0.0], [10.0]])
    test = np.array([[0.1], [9.0], [1.0], [8.0]])
    rep = knn_classify(train, [0, 1], test, [0, 1, 1, 0], k=1)
    assert rep.predictions == [0, 1, 0, 1]
    assert rep.accuracy == 0.5
    assert rep.precision == {0: 0.5, 1: 0.5}
    assert rep.recall == {0: 0.5, 1: 0.5}


def test_errors():
    with pytest.raises(ConfigurationError):
        knn_predict(np.zeros((0, 2)), np.zeros(0), np.zeros((1, 2)), 1)
    with pytest.raises(ConfigurationError):
        knn_predict(np.zeros((3, 2)), np.zeros(3), np.zeros((1, 2)), 4)
    with pytest.raises(ConfigurationError):
        knn_classify(np.zeros((3, 2)), [0, 0, 0], np.zeros((1, 2)), [0], k=1)
