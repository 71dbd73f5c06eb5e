"""Self-supervised training loop, validation split and early stopping."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as tn
from .augment import CropPair, sample_crop_pair
from .clt_losses import CLTConfig, clt_loss, euclidean_distances
from .dataio import Dataset
from .encoder import SGD, Adam, Encoder, EncoderConfig
from .errors import ConfigurationError, NumericError
from .ggeo_reg import GGeoConfig, ggeo_loss, laplacian_for_sample
from .topo_reg import pairwise_distances, topo_loss
from .weighting import DynamicWeights, spclt_total

log = logging.getLogger(__name__)

METHODS = {
    "TS2Vec": ("TS2Vec", "none"),
    "SoftCLT": ("SoftCLT", "none"),
    "Topo-TS2Vec": ("TS2Vec", "topo"),
    "GGeo-TS2Vec": ("TS2Vec", "ggeo"),
    "Topo-SoftCLT": ("SoftCLT", "topo"),
    "GGeo-SoftCLT": ("SoftCLT", "ggeo"),
}
SP_KINDS = ("none", "topo", "ggeo")
VAL_FRACTION = 0.25


@dataclass(frozen=True)
class LossConfig:
    clt: CLTConfig = field(default_factory=CLTConfig)
    sp_kind: str = "none"
    ggeo: GGeoConfig = field(default_factory=GGeoConfig)
    batch_size: int = 8
    lr: float = 0.001
    lr_eta: float = 0.05
    max_epochs: int = 600
    max_iters: int | None = None
    early_stop_patience: int = 10
    min_delta: float = 1e-4
    plateau_patience: int = 5
    lr_floor: float = 1e-5
    schedule: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sp_kind not in SP_KINDS:
            raise ConfigurationError(f"sp_kind must be one of {SP_KINDS}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.lr < 0 or self.lr_eta < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigurationError("max_epochs and early_stop_patience must be positive")

    @property
    def method(self) -> str:
        prefix = {"none": "", "topo": "Topo-", "ggeo": "GGeo-"}[self.sp_kind]
        return prefix + self.clt.kind

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        method = d.pop("method", None)
        clt = CLTConfig(**d.pop("clt", {}))
        ggeo = GGeoConfig(**d.pop("ggeo", {}))
        if method is not None:
            if method not in METHODS:
                raise ConfigurationError(f"unknown method {method!r}")
            kind, sp = METHODS[method]
            clt = replace(clt, kind=kind)
            d.setdefault("sp_kind", sp)
            if d["sp_kind"] != sp:
                raise ConfigurationError(f"method {method} conflicts with sp_kind {d['sp_kind']}")
        try:
            return cls(clt=clt, ggeo=ggeo, **d)
        except TypeError as exc:
            raise ConfigurationError(f"bad loss config: {exc}") from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def method_config(method: str, **overrides) -> LossConfig:
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {list(METHODS)}")
    kind, sp = METHODS[method]
    clt_fields = {k: overrides.pop(k) for k in list(overrides) if k in CLTConfig.__dataclass_fields__}
    ggeo_fields = {k: overrides.pop(k) for k in list(overrides) if k in GGeoConfig.__dataclass_fields__}
    return LossConfig(clt=CLTConfig(kind=kind, **clt_fields), sp_kind=sp,
                      ggeo=GGeoConfig(**ggeo_fields), **overrides)


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    val: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    def add_step(self, **rec) -> None:
        if self.steps and rec["step"] <= self.steps[-1]["step"]:
            raise ConfigurationError("history step counter must increase")
        self.steps.append(rec)

    @property
    def initial_val(self) -> float:
        return self.val[0]["val_l_clt"]

    @property
    def best_val(self) -> float:
        return min(v["val_l_clt"] for v in self.val)

    def write_csv(self, path: str | Path) -> None:
        cols = ["step", "epoch", "l_clt", "l_sp", "sigma_clt", "sigma_sp", "total", "lr"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for rec in self.steps:
                w.writerow({c: rec.get(c, "") for c in cols})

    def write_val_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "val_l_clt", "lr"])
            w.writeheader()
            for rec in self.val:
                w.writerow(rec)


def split_validation(ds: Dataset, seed: int, fraction: float = VAL_FRACTION) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of the instances, stratified by label when labels exist.

    The total held out is round(fraction * N); per-class shares use the
    largest-remainder rule, ties to the lower class index.
    """
    n = ds.shape[0]
    if n < 4:
        raise ConfigurationError(f"validation split needs N >= 4, got {n}")
    rng = np.random.default_rng(seed)
    n_val = int(np.floor(fraction * n + 0.5))
    if ds.labels is None:
        perm = rng.permutation(n)
        val_idx = np.sort(perm[:n_val])
    else:
        classes = np.unique(ds.labels)
        members = [np.flatnonzero(ds.labels == c) for c in classes]
        exact = np.array([fraction * len(m) for m in members])
        take = np.floor(exact).astype(int)
        rem = n_val - take.sum()
        order = np.lexsort((np.arange(len(classes)), -(exact - take)))
        for c in order[:max(rem, 0)]:
            take[c] += 1
        picked = []
        for m, k in zip(members, take):
            picked.extend(rng.permutation(m)[:k])
        val_idx = np.sort(np.array(picked, dtype=int))
    train_idx = np.setdiff1d(np.arange(n), val_idx)
    return ds.subset(train_idx), ds.subset(val_idx)


class _Problem:
    """Per-run constants: raw distances, Laplacians, and the loss plumbing."""

    def __init__(self, data: np.ndarray, cfg: LossConfig):
        self.data = data
        self.cfg = cfg
        self.flat = data.reshape(data.shape[0], -1)
        self.laplacians = None
        if cfg.sp_kind == "ggeo":
            self.laplacians = np.stack([laplacian_for_sample(x, cfg.ggeo) for x in data])

    def clt(self, enc: Encoder, idx: np.ndarray, crop: CropPair, rng: np.random.Generator,
            mode: str = "train") -> tn.Tensor:
        x = self.data[idx]
        v1, v2 = crop.views(x, axis=1)
        z1 = enc.encode(v1, mode, rng)
        z2 = enc.encode(v2, mode, rng)
        o1, o2 = crop.overlap_slices()
        z1 = z1[:, o1]
        z2 = z2[:, o2]
        raw = euclidean_distances(self.flat[idx]) if self.cfg.clt.kind == "SoftCLT" else None
        return clt_loss(z1, z2, raw, self.cfg.clt)

    def sp(self, enc: Encoder, idx: np.ndarray) -> tn.Tensor | None:
        if self.cfg.sp_kind == "none":
            return None
        z = enc.encode(self.data[idx], "eval")
        if self.cfg.sp_kind == "topo":
            # both matrices scaled by their largest entry and the loss by the
            # batch size, as in the authors' topological regulariser
            a_x = euclidean_distances(self.flat[idx])
            a_x = a_x / a_x.max() if a_x.max() > 0 else a_x
            a_z = pairwise_distances(tn.amax(z, axis=1))
            top = tn.amax(tn.reshape(a_z, (-1,)), axis=0)
            if top.item() > 0:
                a_z = a_z / top
            return topo_loss(a_x, a_z) / float(len(idx))
        return ggeo_loss(None, z, self.cfg.ggeo, self.laplacians[idx])


def _batches(n: int, bs: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    nb = max(1, n // bs)
    return [np.sort(perm[b * bs:(b + 1) * bs]) for b in range(nb)]


def validation_loss(enc: Encoder, problem: _Problem, seed: int, repeats: int = 4, mode: str = "eval") -> float:
    """L_CLT over every validation instance, averaged over ``repeats`` passes.

    Crops (and masks, in train mode) come from a fixed seed so epochs are
    comparable. The default eval mode scores the encoder without masking.
    """
    rng = np.random.default_rng(seed)
    n = problem.data.shape[0]
    bs = min(problem.cfg.batch_size, n)
    total, count = 0.0, 0
    with tn.no_grad():
        for _ in range(repeats):
            perm = rng.permutation(n)
            for s in range(0, n, bs):
                idx = np.sort(perm[s:s + bs])
                if idx.size < 2 and n >= 2:
                    idx = np.sort(perm[-2:]) if s > 0 else idx
                crop = sample_crop_pair(problem.data.shape[1], rng)
                total += problem.clt(enc, idx, crop, rng, mode).item() * idx.size
                count += idx.size
    return total / count


def train(ds: Dataset, enc_cfg: EncoderConfig, loss_cfg: LossConfig, encoder: Encoder | None = None,
          val: Dataset | None = None) -> tuple[Encoder, DynamicWeights, TrainHistory]:
    """Train an encoder; returns the best-validation encoder, its weights and the history.

    When ``val`` is omitted, 25% of ``ds`` is held out internally.
    """
    if val is None:
        tr, val = split_validation(ds, loss_cfg.seed)
    else:
        tr = ds
    n = tr.shape[0]
    bs = min(loss_cfg.batch_size, n)
    needs_pairs = loss_cfg.sp_kind == "topo" or loss_cfg.clt.kind in ("TS2Vec", "SoftCLT")
    if needs_pairs and bs < 2:
        raise ConfigurationError("batch size must be >= 2 for instance contrasting")
    if tr.shape[2] != enc_cfg.input_dim:
        raise ConfigurationError(f"data has D={tr.shape[2]}, encoder expects {enc_cfg.input_dim}")

    rng = np.random.default_rng(loss_cfg.seed)
    init_rng, step_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    val_seed = int(rng.integers(2**31))
    enc = encoder if encoder is not None else Encoder.init(enc_cfg, init_rng)
    weights = DynamicWeights.init(loss_cfg.lr_eta)
    opt = Adam(enc.parameters(), lr=loss_cfg.lr)
    opt_eta = SGD(weights.parameters(), lr=loss_cfg.lr_eta)

    problem = _Problem(tr.data, loss_cfg)
    val_problem = _Problem(val.data, replace(loss_cfg, sp_kind="none"))
    history = TrainHistory()

    best = validation_loss(enc, val_problem, val_seed)
    history.val.append({"epoch": 0, "val_l_clt": best, "lr": opt.lr})
    best_state = (enc.get_flat(), weights.s_clt.data.copy(), weights.s_sp.data.copy())
    since_best = since_plateau = 0
    plateau_ref = best
    step = 0

    for epoch in range(1, loss_cfg.max_epochs + 1):
        for idx in _batches(n, bs, step_rng):
            crop = sample_crop_pair(tr.shape[1], step_rng)
            l_clt = problem.clt(enc, idx, crop, step_rng)
            l_sp = problem.sp(enc, idx)
            _check_finite("L_clt", l_clt, step)
            if l_sp is None:
                total = l_clt
            else:
                _check_finite("L_sp", l_sp, step)
                total = spclt_total(l_clt, l_sp, weights)
            _check_finite("total", total, step)
            opt.zero_grad()
            opt_eta.zero_grad()
            tn.backward(total)
            opt.step()
            if l_sp is not None:
                opt_eta.step()
            step += 1
            history.add_step(step=step, epoch=epoch, l_clt=l_clt.item(),
                             l_sp=float("nan") if l_sp is None else l_sp.item(),
                             sigma_clt=weights.sigma_clt, sigma_sp=weights.sigma_sp,
                             total=total.item(), lr=opt.lr)
            if loss_cfg.max_iters is not None and step >= loss_cfg.max_iters:
                break

        v = validation_loss(enc, val_problem, val_seed)
        history.val.append({"epoch": epoch, "val_l_clt": v, "lr": opt.lr})
        if v < best - loss_cfg.min_delta:
            since_best = 0
        else:
            since_best += 1
        if v < best:
            best = v
            best_state = (enc.get_flat(), weights.s_clt.data.copy(), weights.s_sp.data.copy())
        if loss_cfg.schedule:
            if v < plateau_ref - loss_cfg.min_delta:
                plateau_ref, since_plateau = v, 0
            else:
                since_plateau += 1
                if since_plateau >= loss_cfg.plateau_patience:
                    opt.lr = max(opt.lr * 0.5, loss_cfg.lr_floor)
                    plateau_ref, since_plateau = v, 0
            if since_best >= loss_cfg.early_stop_patience:
                history.stopped_early = True
                log.info("early stop at epoch %d (best val %.4f)", epoch, best)
                break
        if loss_cfg.max_iters is not None and step >= loss_cfg.max_iters:
            break

    enc.set_flat(best_state[0])
    weights.s_clt.data = best_state[1]
    weights.s_sp.data = best_state[2]
    return enc, weights, history


def _check_finite(name: str, t: tn.Tensor, step: int) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite {name} at step {step}: {t.data!r}")


def sp_value(enc: Encoder, data: np.ndarray, cfg: LossConfig) -> float:
    """Structure-preserving loss of an encoder over ``data``, batch by batch."""
    if cfg.sp_kind == "none":
        return float("nan")
    problem = _Problem(data, cfg)
    n = data.shape[0]
    bs = max(2, min(cfg.batch_size, n))
    vals = []
    with tn.no_grad():
        for s in range(0, n - 1, bs):
            idx = np.arange(s, min(s + bs, n))
            if idx.size < 2:
                break
            vals.append(problem.sp(enc, idx).item())
    return float(np.mean(vals))


def clt_value(enc: Encoder, data: np.ndarray, cfg: LossConfig, seed: int = 0) -> float:
    """Contrastive loss of an encoder over ``data`` with fixed-seed crops and masks."""
    return validation_loss(enc, _Problem(data, replace(cfg, sp_kind="none")), seed)
