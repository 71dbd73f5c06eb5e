"""Hierarchical TS2Vec and SoftCLT contrastive losses on raw inner products.

Both losses share one kernel. For a group of ``n`` vectors from each view
(the batch at a fixed timestamp for instance-wise contrasting, or the
timestamps of one series for time-wise contrasting) it forms

    cross[i, j] = log(exp(u_i . v_j) + exp(v_i . u_j))          all j
    self[i, j]  = log(exp(u_i . u_j) + exp(v_i . v_j))          j != i
    logS[i]     = logsumexp over every cross[i, :] and self[i, j != i]

so that -log(pair / S) is ``logS - cross`` or ``logS - self``. Working in the
log domain is the max-subtraction stabilisation; the ratios are unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import expit

from . import tensor as tn
from .errors import ConfigurationError, ContractViolation

M_MODES = ("constant", "linear", "exponential")


@dataclass(frozen=True)
class CLTConfig:
    kind: str = "TS2Vec"
    tau_inst: float = 0.0
    tau_temp: float = 0.0
    alpha: float = 0.5
    lam: float = 0.5
    m_mode: str = "constant"

    def __post_init__(self):
        if self.kind not in ("TS2Vec", "SoftCLT"):
            raise ConfigurationError(f"unknown contrastive loss {self.kind!r}")
        if self.tau_inst < 0 or self.tau_temp < 0:
            raise ConfigurationError("temperatures must be non-negative")
        if not (0 <= self.alpha <= 1 and 0 <= self.lam <= 1):
            raise ConfigurationError("alpha and lambda must lie in [0, 1]")
        if self.m_mode not in M_MODES:
            raise ConfigurationError(f"m_mode must be one of {M_MODES}")


def _pair_logits(u: tn.Tensor, v: tn.Tensor):
    """u, v: (G, n, P). Returns (cross, self_filled, logS) with shapes (G,n,n), (G,n,n), (G,n).

    ``self_filled`` has 0 on its diagonal; the diagonal is excluded from logS.
    """
    n = u.shape[-2]
    uv = u @ tn.swapaxes(v, -1, -2)
    cross = tn.logaddexp(uv, tn.swapaxes(uv, -1, -2))
    uu = u @ tn.swapaxes(u, -1, -2)
    vv = v @ tn.swapaxes(v, -1, -2)
    diag = np.eye(n, dtype=bool)
    self_ = tn.logaddexp(uu, vv)
    self_masked = tn.masked_fill(self_, diag, -np.inf)
    log_s = tn.logsumexp(tn.concat([cross, self_masked], axis=-1), axis=-1)
    return cross, tn.masked_fill(self_, diag, 0.0), log_s


def _hard_term(u: tn.Tensor, v: tn.Tensor) -> tn.Tensor:
    """Mean over (group, i) of -log(positive pair / S)."""
    cross, _, log_s = _pair_logits(u, v)
    n = u.shape[-2]
    pos = cross[(slice(None), np.arange(n), np.arange(n))]
    return tn.mean(log_s - pos)


def _soft_term(u: tn.Tensor, v: tn.Tensor, w: np.ndarray) -> tn.Tensor:
    """Mean over (group, i) of the weighted sum of -log ratios; w is (n, n) or (G, n, n)."""
    cross, self_, log_s = _pair_logits(u, v)
    n = u.shape[-2]
    w_off = w * (1.0 - np.eye(n))
    ls = tn.reshape(log_s, log_s.shape + (1,))
    term = tn.sum((ls - cross) * w, axis=-1) + tn.sum((ls - self_) * w_off, axis=-1)
    return tn.mean(term)


def _depths(z1: tn.Tensor, z2: tn.Tensor):
    """Yield (k, z1, z2) for pooling depth k = 0.. until the time axis has length 1."""
    k = 0
    while True:
        yield k, z1, z2
        if z1.shape[1] == 1:
            return
        z1 = tn.max_pool_time(z1, axis=1)
        z2 = tn.max_pool_time(z2, axis=1)
        k += 1


def _check_views(z1, z2):
    z1, z2 = tn.as_tensor(z1), tn.as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 3:
        raise ConfigurationError(f"views must share a B x T x P shape, got {z1.shape} and {z2.shape}")
    return z1, z2


def ts2vec_loss(z1, z2) -> tn.Tensor:
    """Hierarchical TS2Vec loss between two overlap-aligned views (B x T x P)."""
    z1, z2 = _check_views(z1, z2)
    per_depth = []
    for _, a, b in _depths(z1, z2):
        inst = _hard_term(tn.swapaxes(a, 0, 1), tn.swapaxes(b, 0, 1))
        if a.shape[1] > 1:
            inst = inst + _hard_term(a, b)
        per_depth.append(inst)
    return tn.sum(tn.concat([tn.reshape(t, (1,)) for t in per_depth])) / float(len(per_depth))


def soft_weight_inst(dist: np.ndarray, tau_inst: float, alpha: float) -> np.ndarray:
    """Soft instance assignments 2a / (1 + exp(tau d)) + (1 - a) [i == j]."""
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist < 0):
        raise ContractViolation("instance distances must be non-negative")
    w = 2.0 * alpha * expit(-tau_inst * dist)
    return w + (1.0 - alpha) * np.eye(dist.shape[0])


def m_value(m_mode: str, k: int) -> float:
    if m_mode == "constant":
        return 1.0
    if m_mode == "linear":
        return float(k + 1)
    if m_mode == "exponential":
        return float(2 ** k)
    raise ConfigurationError(f"unknown m_mode {m_mode!r}")


def soft_weight_temp(t, s, tau_temp: float, m_mode: str, k: int):
    """2 / (1 + exp(tau m(k) |t - s|)); broadcasts over array t, s."""
    gap = np.abs(np.asarray(t, dtype=np.float64) - np.asarray(s, dtype=np.float64))
    return 2.0 * expit(-tau_temp * m_value(m_mode, k) * gap)


def softclt_loss(z1, z2, raw_dist: np.ndarray, cfg: CLTConfig) -> tn.Tensor:
    """Hierarchical SoftCLT loss.

    ``raw_dist`` is the B x B Euclidean distance matrix of the raw batch; the
    instance weights it yields are reused at every pooling depth.
    """
    z1, z2 = _check_views(z1, z2)
    B = z1.shape[0]
    if np.shape(raw_dist) != (B, B):
        raise ConfigurationError(f"raw_dist must be {B} x {B}")
    w_inst = soft_weight_inst(raw_dist, cfg.tau_inst, cfg.alpha)
    per_depth = []
    for k, a, b in _depths(z1, z2):
        inst = _soft_term(tn.swapaxes(a, 0, 1), tn.swapaxes(b, 0, 1), w_inst)
        if a.shape[1] > 1:
            T = a.shape[1]
            idx = np.arange(T)
            w_temp = soft_weight_temp(idx[:, None], idx[None, :], cfg.tau_temp, cfg.m_mode, k)
            term = inst * cfg.lam + _soft_term(a, b, w_temp) * (1.0 - cfg.lam)
        else:
            term = inst * cfg.lam
        per_depth.append(term)
    return tn.sum(tn.concat([tn.reshape(t, (1,)) for t in per_depth])) / float(len(per_depth))


def clt_loss(z1, z2, raw_dist: np.ndarray | None, cfg: CLTConfig) -> tn.Tensor:
    if cfg.kind == "TS2Vec":
        return ts2vec_loss(z1, z2)
    if raw_dist is None:
        raise ConfigurationError("SoftCLT needs raw instance distances")
    return softclt_loss(z1, z2, raw_dist, cfg)


def similarity_sums(z1: np.ndarray, z2: np.ndarray, i: int, t: int) -> tuple[float, float]:
    """The instance-wise and time-wise similarity sums for sample i at timestamp t."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    a, b = z1[:, t], z2[:, t]
    s_inst = np.exp(a[i] @ b.T).sum() + np.exp(b[i] @ a.T).sum()
    others = np.arange(a.shape[0]) != i
    s_inst += np.exp(a[i] @ a[others].T).sum() + np.exp(b[i] @ b[others].T).sum()
    a, b = z1[i], z2[i]
    s_temp = np.exp(a[t] @ b.T).sum() + np.exp(b[t] @ a.T).sum()
    others = np.arange(a.shape[0]) != t
    s_temp += np.exp(a[t] @ a[others].T).sum() + np.exp(b[t] @ b[others].T).sum()
    return float(s_inst), float(s_temp)


def euclidean_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances between rows of a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    return squareform(pdist(x.reshape(x.shape[0], -1)))
