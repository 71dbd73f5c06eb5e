"""Downstream k-NN classification on instance-level representations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError


@dataclass
class ClassificationReport:
    accuracy: float
    precision: dict[int, float]
    recall: dict[int, float]
    macro_precision: float
    macro_recall: float
    k: int
    predictions: list[int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precision"] = {str(c): v for c, v in self.precision.items()}
        d["recall"] = {str(c): v for c, v in self.recall.items()}
        return d


def knn_predict(train_reps: np.ndarray, train_labels: np.ndarray, test_reps: np.ndarray, k: int) -> np.ndarray:
    """Majority vote of the k nearest training points.

    Neighbour ties break by training index; vote ties go to the class with the
    smallest summed neighbour distance, then to the smaller label.
    """
    train_reps = np.asarray(train_reps, dtype=np.float64)
    test_reps = np.asarray(test_reps, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    M = train_reps.shape[0]
    if M == 0:
        raise ConfigurationError("empty training set")
    if train_labels.shape != (M,):
        raise ConfigurationError("train labels must match train representations")
    if not 1 <= k <= M:
        raise ConfigurationError(f"k must be in [1, {M}], got {k}")
    if train_reps.ndim != 2 or test_reps.ndim != 2 or train_reps.shape[1] != test_reps.shape[1]:
        raise ConfigurationError("train and test representations must be 2-D with equal width")
    D = cdist(test_reps, train_reps)
    nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
    preds = np.empty(test_reps.shape[0], dtype=np.int64)
    for q in range(test_reps.shape[0]):
        labs = train_labels[nearest[q]]
        dists = D[q, nearest[q]]
        classes, counts = np.unique(labs, return_counts=True)
        summed = np.array([dists[labs == c].sum() for c in classes])
        best = np.lexsort((classes, summed, -counts))[0]
        preds[q] = classes[best]
    return preds


def knn_classify(train_reps, train_labels, test_reps, test_labels, k: int = 5) -> ClassificationReport:
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if np.unique(train_labels).size < 2:
        raise ConfigurationError("training labels must cover at least two classes")
    preds = knn_predict(train_reps, train_labels, test_reps, k)
    if test_labels.shape != preds.shape:
        raise ConfigurationError("test labels must match test representations")
    classes = np.union1d(train_labels, test_labels)
    precision, recall = {}, {}
    for c in classes:
        tp = int(np.sum((preds == c) & (test_labels == c)))
        n_pred = int(np.sum(preds == c))
        n_true = int(np.sum(test_labels == c))
        precision[int(c)] = tp / n_pred if n_pred else 0.0
        recall[int(c)] = tp / n_true if n_true else 0.0
    return ClassificationReport(
        accuracy=float(np.mean(preds == test_labels)),
        precision=precision,
        recall=recall,
        macro_precision=float(np.mean(list(precision.values()))),
        macro_recall=float(np.mean(list(recall.values()))),
        k=k,
        predictions=preds.tolist(),
    )
