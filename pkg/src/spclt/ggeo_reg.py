"""Graph-geometry-preserving regulariser over the timestamp axis.

Per sample, timestamps are graph nodes. Geodesics on a symmetric kNN graph
of the raw node vectors feed a Gaussian kernel whose diffusion-map
normalisation approximates the Laplace-Beltrami operator L. The pullback
metric at each node is estimated without Jacobians via the carre du champ
identity  2<grad f, grad g> = L(fg) - f Lg - g Lf  applied to the latent
coordinates, and the loss penalises its distance from the identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, shortest_path

from . import tensor as tn
from .clt_losses import euclidean_distances
from .errors import ConfigurationError


@dataclass(frozen=True)
class GGeoConfig:
    h: float = 1.0
    k_geo: int = 5
    node_reduce: str = "mean"

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError(f"kernel width h must be positive, got {self.h}")
        if self.k_geo < 1:
            raise ConfigurationError(f"k_geo must be >= 1, got {self.k_geo}")
        if self.node_reduce not in ("mean", "sum"):
            raise ConfigurationError("node_reduce must be 'mean' or 'sum'")


def knn_graph(x: np.ndarray, k_geo: int) -> np.ndarray:
    """Symmetric kNN adjacency (T x T) with Euclidean weights; inf marks a non-edge.

    Components left disconnected are joined by their shortest inter-component
    edge, one bridge at a time.
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[0]
    E = euclidean_distances(x)
    W = np.full((T, T), np.inf)
    k = min(k_geo, T - 1)
    for i in range(T):
        others = np.array([j for j in range(T) if j != i])
        order = others[np.lexsort((others, E[i, others]))][:k]
        W[i, order] = E[i, order]
    W = np.minimum(W, W.T)
    while True:
        n_comp, labels = connected_components(csgraph_from_dense(W, null_value=np.inf), directed=False)
        if n_comp <= 1:
            return W
        between = labels[:, None] != labels[None, :]
        cand = np.where(between, E, np.inf)
        i, j = np.unravel_index(np.argmin(cand), cand.shape)
        W[i, j] = W[j, i] = E[i, j]


def geodesic_distances(x: np.ndarray, k_geo: int = 5) -> np.ndarray:
    """All-pairs shortest paths over the kNN graph of the rows of x (T x D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError(f"geodesics need a T x D array with T >= 2, got {x.shape}")
    W = knn_graph(x, k_geo)
    G = shortest_path(csgraph_from_dense(W, null_value=np.inf), method="D", directed=False)
    np.fill_diagonal(G, 0.0)
    return np.minimum(G, G.T)


def kernel_laplacian(G: np.ndarray, h: float) -> np.ndarray:
    """L = (4/h) (D^-1 K - I) with K = exp(-G^2 / h)."""
    if h <= 0:
        raise ConfigurationError(f"kernel width h must be positive, got {h}")
    G = np.asarray(G, dtype=np.float64)
    K = np.exp(-(G * G) / h)
    P = K / K.sum(axis=-1, keepdims=True)
    return (4.0 / h) * (P - np.eye(G.shape[-1]))


def laplacian_for_sample(x: np.ndarray, cfg: GGeoConfig) -> np.ndarray:
    return kernel_laplacian(geodesic_distances(x, cfg.k_geo), cfg.h)


def metric_estimate(L: np.ndarray, Z) -> tn.Tensor:
    """Per-node P x P pullback-metric estimate H[..., n, a, b].

    H[n, a, b] = 1/2 [ L(Z_a Z_b)_n - Z_na (L Z_b)_n - Z_nb (L Z_a)_n ].
    """
    Z = tn.as_tensor(Z)
    L = np.asarray(L, dtype=np.float64)
    *lead, T, P = Z.shape
    if L.shape[-2:] != (T, T):
        raise ConfigurationError(f"Laplacian {L.shape} does not match {T} nodes")
    col = tn.reshape(Z, (*lead, T, P, 1))
    row = tn.reshape(Z, (*lead, T, 1, P))
    prod = tn.reshape(col * row, (*lead, T, P * P))
    l_prod = tn.reshape(tn.matmul(tn.Tensor(L), prod), (*lead, T, P, P))
    lz = tn.matmul(tn.Tensor(L), Z)
    cross = col * tn.reshape(lz, (*lead, T, 1, P))
    # adding the two cross terms first keeps H bit-exactly symmetric
    return (l_prod - (cross + tn.swapaxes(cross, -1, -2))) * 0.5


def distortion(H: tn.Tensor, node_reduce: str = "mean") -> tn.Tensor:
    """Tr(H^2 - 2H) per node (H symmetric), reduced over nodes -> shape (...,)."""
    P = H.shape[-1]
    idx = np.arange(P)
    tr_h2 = tn.sum(tn.square(H), axis=(-2, -1))
    tr_h = tn.sum(H[(Ellipsis, idx, idx)], axis=-1)
    per_node = tr_h2 - tr_h * 2.0
    return tn.mean(per_node, axis=-1) if node_reduce == "mean" else tn.sum(per_node, axis=-1)


def ggeo_loss(x: np.ndarray, z, cfg: GGeoConfig, laplacians: np.ndarray | None = None) -> tn.Tensor:
    """Batch mean of the per-sample distortion; x is B x T x D raw, z is B x T x P.

    ``laplacians`` (B x T x T) may be passed in when precomputed.
    """
    z = tn.as_tensor(z)
    if laplacians is None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[:2] != z.shape[:2]:
            raise ConfigurationError(f"x {x.shape} and z {z.shape} disagree on batch/time")
        laplacians = np.stack([laplacian_for_sample(xi, cfg) for xi in x])
    H = metric_estimate(laplacians, z)
    return tn.mean(distortion(H, cfg.node_reduce))
