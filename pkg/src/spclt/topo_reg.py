"""Topology-preserving regulariser from 0-dimensional persistence pairings.

The death edges of 0-dimensional Vietoris-Rips persistence on a distance
matrix are exactly the edges of its minimum spanning tree, so the pairing is
computed with Kruskal's algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractViolation


@dataclass(frozen=True)
class Pairing:
    edges: tuple[tuple[int, int], ...]

    @property
    def index(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.edges:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        e = np.array(self.edges)
        return e[:, 0], e[:, 1]


def _check_distance_matrix(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolation(f"{name} must be square, got shape {A.shape}")
    if np.any(A < 0):
        raise ContractViolation(f"{name} has negative entries")
    if not np.array_equal(A, A.T):
        raise ContractViolation(f"{name} is not symmetric")
    return A


def persistence_pairing(A: np.ndarray) -> Pairing:
    """MST edges (i < j) of the complete graph weighted by A.

    Equal weights are ordered by edge index (i, j) lexicographically.
    """
    A = _check_distance_matrix(A)
    B = A.shape[0]
    iu, ju = np.triu_indices(B, k=1)
    order = np.lexsort((ju, iu, A[iu, ju]))
    parent = list(range(B))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        parent[max(ri, rj)] = min(ri, rj)
        edges.append((i, j))
        if len(edges) == B - 1:
            break
    return Pairing(tuple(edges))


def pairwise_distances(r) -> tn.Tensor:
    """Differentiable Euclidean distance matrix between rows of a (B, P) tensor."""
    r = tn.as_tensor(r)
    B, P = r.shape
    diff = tn.reshape(r, (B, 1, P)) - tn.reshape(r, (1, B, P))
    return tn.sqrt(tn.sum(tn.square(diff), axis=-1))


def topo_loss(A_X: np.ndarray, A_Z) -> tn.Tensor:
    """Half squared mismatch of distances selected by both spaces' pairings.

    Pairings are recomputed from the current values and held fixed for the
    gradient, so the loss is smooth on each piece where they don't change.
    """
    A_X = _check_distance_matrix(A_X, "A_X")
    A_Z = tn.as_tensor(A_Z)
    if A_Z.shape != A_X.shape:
        raise ContractViolation(f"A_X {A_X.shape} and A_Z {A_Z.shape} differ in shape")
    pi_x = persistence_pairing(A_X).index
    pi_z = persistence_pairing(A_Z.data).index
    ax = tn.square(tn.Tensor(A_X[pi_x]) - A_Z[pi_x])
    az = tn.square(A_Z[pi_z] - tn.Tensor(A_X[pi_z]))
    return tn.sum(ax) * 0.5 + tn.sum(az) * 0.5
