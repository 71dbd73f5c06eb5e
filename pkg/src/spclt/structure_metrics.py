"""Neighbourhood and distance-matrix quality metrics for embeddings.

All functions take two n x n distance matrices, the reference (original
space, X) first and the embedding (latent space, Z) second. Neighbour ranks
exclude the point itself, start at 1, and break distance ties by index.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .clt_losses import euclidean_distances
from .dataio import Dataset, ReprSet
from .errors import ConfigurationError

DEFAULT_K = 10
MAX_LOCAL_SAMPLES = 500


@dataclass
class StructureReport:
    scale: str
    k: int
    knn: float
    trust: float
    cont: float
    mrre: float
    drmse: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.knn, self.trust, self.cont, self.mrre, self.drmse)


def rank_matrix(D: np.ndarray) -> np.ndarray:
    """R[i, j] = rank of j among i's neighbours (1 = nearest); R[i, i] = 0."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    M = D.copy()
    np.fill_diagonal(M, -np.inf)
    order = np.argsort(M, axis=1, kind="stable")
    R = np.empty((n, n), dtype=np.int64)
    R[np.arange(n)[:, None], order] = np.arange(n)[None, :]
    return R


def _check(D_X, D_Z, k: int):
    D_X = np.asarray(D_X, dtype=np.float64)
    D_Z = np.asarray(D_Z, dtype=np.float64)
    if D_X.shape != D_Z.shape or D_X.ndim != 2 or D_X.shape[0] != D_X.shape[1]:
        raise ConfigurationError(f"distance matrices must be square and equal-shaped: {D_X.shape} vs {D_Z.shape}")
    n = D_X.shape[0]
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    return D_X, D_Z, n


def knn_overlap(D_X, D_Z, k: int) -> float:
    D_X, D_Z, n = _check(D_X, D_Z, k)
    in_x = (rank_matrix(D_X) >= 1) & (rank_matrix(D_X) <= k)
    in_z = (rank_matrix(D_Z) >= 1) & (rank_matrix(D_Z) <= k)
    return int((in_x & in_z).sum()) / (n * k)


def max_valid_k(n: int) -> int:
    """Largest k below n/2, the range where trustworthiness is guaranteed to lie in [0, 1].

    The normaliser 2n - 3k - 1 stays positive a little further, up to
    k < (2n - 1)/3, but the worst-case penalty exceeds it there.
    """
    return max(1, (n - 1) // 2)


def trustworthiness(D_X, D_Z, k: int) -> float:
    """Penalises latent neighbours that are not neighbours in the original space."""
    D_X, D_Z, n = _check(D_X, D_Z, k)
    denom = n * k * (2 * n - 3 * k - 1)
    if denom <= 0:
        raise ConfigurationError(f"k={k} too large for n={n}: need 2n - 3k - 1 > 0")
    R_X = rank_matrix(D_X)
    R_Z = rank_matrix(D_Z)
    intruders = (R_Z >= 1) & (R_Z <= k) & (R_X > k)
    penalty = (R_X - k)[intruders].sum()
    return float(1.0 - 2.0 / denom * penalty)


def continuity(D_X, D_Z, k: int) -> float:
    """Penalises original neighbours that are lost in the latent space."""
    return trustworthiness(D_Z, D_X, k)


def _mrre_normaliser(n: int, k: int) -> float:
    r = np.arange(1, k + 1)
    return float(n * np.sum(np.maximum(r - 1, n - 1 - r) / r))


def mrre(D_X, D_Z, k: int) -> float:
    """Mean of the two directional mean relative rank errors, scaled into [0, 1]."""
    D_X, D_Z, n = _check(D_X, D_Z, k)
    R_X = rank_matrix(D_X)
    R_Z = rank_matrix(D_Z)
    diff = np.abs(R_X - R_Z).astype(np.float64)
    near_z = (R_Z >= 1) & (R_Z <= k)
    near_x = (R_X >= 1) & (R_X <= k)
    zx = (diff[near_z] / R_Z[near_z]).sum()
    xz = (diff[near_x] / R_X[near_x]).sum()
    c = _mrre_normaliser(n, k)
    return float(0.5 * (zx / c + xz / c))


def _max_normalise(D: np.ndarray) -> np.ndarray:
    n = D.shape[0]
    off = D[~np.eye(n, dtype=bool)]
    top = off.max() if off.size else 0.0
    return D / top if top > 0 else D


def drmse(D_X, D_Z) -> float:
    """RMSE over the strict upper triangle after scaling each matrix by its largest off-diagonal entry."""
    D_X = np.asarray(D_X, dtype=np.float64)
    D_Z = np.asarray(D_Z, dtype=np.float64)
    if D_X.shape != D_Z.shape:
        raise ConfigurationError(f"distance matrices differ in shape: {D_X.shape} vs {D_Z.shape}")
    iu = np.triu_indices(D_X.shape[0], k=1)
    diff = _max_normalise(D_X)[iu] - _max_normalise(D_Z)[iu]
    return float(np.sqrt(np.mean(diff * diff))) if diff.size else 0.0


def report(D_X, D_Z, k: int, scale: str, n_samples: int = 1) -> StructureReport:
    return StructureReport(
        scale=scale,
        k=k,
        knn=knn_overlap(D_X, D_Z, k),
        trust=trustworthiness(D_X, D_Z, k),
        cont=continuity(D_X, D_Z, k),
        mrre=mrre(D_X, D_Z, k),
        drmse=drmse(D_X, D_Z),
        n_samples=n_samples,
    )


def evaluate(ds: Dataset, rs: ReprSet, k: int = DEFAULT_K) -> tuple[StructureReport, StructureReport]:
    """Local (timestamps within a sample) and global (between instances) reports.

    k is clamped per scale to the largest value the trustworthiness
    normaliser admits; the report records the k actually used.
    """
    n, T, _ = ds.shape
    if rs.reps.shape[0] != n:
        raise ConfigurationError(f"dataset has {n} instances, representations have {rs.reps.shape[0]}")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    reps = rs.reps.astype(np.float64)

    k_glob = min(k, max_valid_k(n))
    if n < 3:
        raise ConfigurationError("global metrics need at least 3 instances")
    glob = report(euclidean_distances(ds.data.reshape(n, -1)),
                  euclidean_distances(rs.instance_reps.astype(np.float64)), k_glob, "global", n)

    if reps.shape[1] != T:
        raise ConfigurationError(f"dataset has T={T}, representations have T={reps.shape[1]}")
    k_loc = min(k, max_valid_k(T))
    m = min(n, MAX_LOCAL_SAMPLES)
    vals = np.array([
        report(euclidean_distances(ds.data[i]), euclidean_distances(reps[i]), k_loc, "local").as_tuple()
        for i in range(m)
    ])
    mean = vals.mean(axis=0)
    loc = StructureReport("local", k_loc, *map(float, mean), n_samples=m)
    return loc, glob
