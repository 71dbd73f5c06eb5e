"""Loss stabilisation and learned uncertainty weighting of the two objectives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn


def modify(x):
    """x (1 - exp(-x)): near-identity for large x, flat at 0, rising for x < 0.

    Accepts a Tensor (differentiable) or a plain number.
    """
    if isinstance(x, tn.Tensor):
        return x * (1.0 - tn.exp(-x))
    x = np.asarray(x, dtype=np.float64)
    out = x * -np.expm1(-x)
    return float(out) if out.ndim == 0 else out


def modify_grad(x):
    """d/dx of :func:`modify`: 1 - exp(-x) (1 - x)."""
    x = np.asarray(x, dtype=np.float64)
    out = 1.0 - np.exp(-x) * (1.0 - x)
    return float(out) if out.ndim == 0 else out


@dataclass
class DynamicWeights:
    """Learnable log-deviations s = log sigma for the contrastive and structure terms."""

    s_clt: tn.Tensor
    s_sp: tn.Tensor
    lr_eta: float = 0.05

    @classmethod
    def init(cls, lr_eta: float = 0.05, s_clt: float = 0.0, s_sp: float = 0.0) -> "DynamicWeights":
        return cls(tn.Tensor(s_clt, requires_grad=True), tn.Tensor(s_sp, requires_grad=True), lr_eta)

    @property
    def sigma_clt(self) -> float:
        return float(np.exp(self.s_clt.data))

    @property
    def sigma_sp(self) -> float:
        return float(np.exp(self.s_sp.data))

    def parameters(self) -> list[tn.Tensor]:
        return [self.s_clt, self.s_sp]

    def frozen(self) -> "DynamicWeights":
        return DynamicWeights(tn.Tensor(self.s_clt.data), tn.Tensor(self.s_sp.data), self.lr_eta)


def spclt_total(l_clt, l_sp, w: DynamicWeights) -> tn.Tensor:
    """exp(-2 s_clt) m(L_clt) / 2 + exp(-2 s_sp) m(L_sp) / 2 + s_clt + s_sp, m = :func:`modify`."""
    l_clt = modify(tn.as_tensor(l_clt))
    l_sp = modify(tn.as_tensor(l_sp))
    eta_clt = tn.exp(w.s_clt * -2.0) * 0.5
    eta_sp = tn.exp(w.s_sp * -2.0) * 0.5
    return eta_clt * l_clt + eta_sp * l_sp + w.s_clt + w.s_sp


def fixed_total(l_clt, l_sp) -> tn.Tensor:
    """Equal 0.5 / 0.5 weighting of the modified losses."""
    return modify(tn.as_tensor(l_clt)) * 0.5 + modify(tn.as_tensor(l_sp)) * 0.5


def fit_sigmas(a: float, b: float, lr_eta: float = 0.05, max_steps: int = 10_000, tol: float = 1e-3):
    """Plain gradient descent on (s_clt, s_sp) with both modified losses held at a, b.

    Returns (sigma_clt**2, sigma_sp**2, steps). Stops once both squared
    deviations are within ``tol`` relative error of a and b.
    """
    w = DynamicWeights.init(lr_eta)
    for step in range(1, max_steps + 1):
        w.s_clt.grad = w.s_sp.grad = None
        eta_clt = tn.exp(w.s_clt * -2.0) * 0.5
        eta_sp = tn.exp(w.s_sp * -2.0) * 0.5
        total = eta_clt * a + eta_sp * b + w.s_clt + w.s_sp
        tn.backward(total)
        for p in w.parameters():
            p.data = p.data - lr_eta * p.grad
        s1, s2 = np.exp(2 * w.s_clt.data), np.exp(2 * w.s_sp.data)
        if abs(s1 - a) <= tol * a and abs(s2 - b) <= tol * b:
            return float(s1), float(s2), step
    return float(np.exp(2 * w.s_clt.data)), float(np.exp(2 * w.s_sp.data)), max_steps
