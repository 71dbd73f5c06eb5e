"""Dilated causal convolutional encoder x (T x D) -> z (T x P), plus the SPCK checkpoint."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .augment import timestamp_mask
from .errors import ConfigurationError, FormatError

SPCK_MAGIC = b"SPCK"
SPCK_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden: int = 16
    depth: int = 4
    kernel_size: int = 3
    output_dim: int = 32
    mask_prob: float = 0.5

    def __post_init__(self):
        for name in ("input_dim", "hidden", "depth", "kernel_size", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"encoder {name} must be positive")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ConfigurationError("encoder mask_prob must be in [0, 1)")

    def param_count(self) -> int:
        D, H, L, K, P = self.input_dim, self.hidden, self.depth, self.kernel_size, self.output_dim
        return D * H + H + L * 2 * (K * H * H + H) + H * P + P


def _param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) in blob order."""
    D, H, K, P = cfg.input_dim, cfg.hidden, cfg.kernel_size, cfg.output_dim
    shapes = [("in_w", (D, H), D), ("in_b", (H,), D)]
    for l in range(cfg.depth):
        for c in (1, 2):
            shapes.append((f"block{l}.conv{c}.w", (K, H, H), K * H))
            shapes.append((f"block{l}.conv{c}.b", (H,), K * H))
    shapes += [("out_w", (H, P), H), ("out_b", (P,), H)]
    return shapes


class Encoder:
    """TS2Vec-style encoder: linear input projection, optional timestamp mask,
    ``depth`` residual blocks of two dilated causal convolutions (dilation
    2**block) with GELU, and a linear output head."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, tn.Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator) -> "Encoder":
        params = {}
        for name, shape, fan_in in _param_shapes(cfg):
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = tn.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: EncoderConfig) -> "Encoder":
        return cls(cfg, {n: tn.Tensor(np.zeros(s), requires_grad=True) for n, s, _ in _param_shapes(cfg)})

    def parameters(self) -> list[tn.Tensor]:
        return [self.params[name] for name, _, _ in _param_shapes(self.cfg)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __call__(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> tn.Tensor:
        return self.encode(x, mode, rng)

    def encode(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> tn.Tensor:
        """Map (T, D) or (B, T, D) input to (..., T, P)."""
        x = tn.as_tensor(x)
        if x.shape[-1] != self.cfg.input_dim:
            raise ConfigurationError(
                f"input has {x.shape[-1]} features, encoder expects {self.cfg.input_dim}")
        if mode not in ("train", "eval"):
            raise ConfigurationError(f"unknown encoder mode {mode!r}")
        p = self.params
        h = x @ p["in_w"] + p["in_b"]
        if mode == "train" and self.cfg.mask_prob > 0:
            if rng is None:
                raise ConfigurationError("train mode needs an rng for masking")
            h = timestamp_mask(h, self.cfg.mask_prob, rng)
        for l in range(self.cfg.depth):
            d = 2 ** l
            u = tn.conv1d_causal(tn.gelu(h), p[f"block{l}.conv1.w"], p[f"block{l}.conv1.b"], d)
            u = tn.conv1d_causal(tn.gelu(u), p[f"block{l}.conv2.w"], p[f"block{l}.conv2.b"], d)
            h = h + u
        return h @ p["out_w"] + p["out_b"]

    # -- flat parameter vector ---------------------------------------------
    def get_flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.cfg.param_count():
            raise ConfigurationError(f"expected {self.cfg.param_count()} parameters, got {flat.size}")
        off = 0
        for name, shape, _ in _param_shapes(self.cfg):
            n = int(np.prod(shape))
            self.params[name].data = flat[off:off + n].reshape(shape).copy()
            off += n

    # -- checkpoint ------------------------------------------------------------
    def to_bytes(self) -> bytes:
        cfg = json.dumps(asdict(self.cfg), sort_keys=True).encode("utf-8")
        flat = self.get_flat()
        return b"".join([
            SPCK_MAGIC,
            struct.pack("<I", SPCK_VERSION),
            struct.pack("<I", len(cfg)),
            cfg,
            struct.pack("<Q", flat.size),
            flat.astype("<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Encoder":
        if len(blob) < 12 or blob[:4] != SPCK_MAGIC:
            raise FormatError("not an SPCK checkpoint (bad magic)")
        version, clen = struct.unpack_from("<II", blob, 4)
        if version != SPCK_VERSION:
            raise FormatError(f"unsupported SPCK version {version}")
        if len(blob) < 12 + clen + 8:
            raise FormatError(f"truncated checkpoint: expected at least {12 + clen + 8} bytes, got {len(blob)}")
        try:
            cfg = EncoderConfig(**json.loads(blob[12:12 + clen].decode("utf-8")))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad checkpoint config record: {exc}") from None
        (count,) = struct.unpack_from("<Q", blob, 12 + clen)
        start = 12 + clen + 8
        if count != cfg.param_count() or len(blob) != start + 8 * count:
            raise FormatError(
                f"checkpoint payload: expected {start + 8 * cfg.param_count()} bytes, got {len(blob)}")
        enc = cls.zeros(cfg)
        enc.set_flat(np.frombuffer(blob, dtype="<f8", count=count, offset=start))
        return enc

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Encoder":
        return cls.from_bytes(Path(path).read_bytes())

    def copy(self) -> "Encoder":
        enc = Encoder.zeros(self.cfg)
        enc.set_flat(self.get_flat())
        return enc


def encode_dataset(enc: Encoder, data: np.ndarray, batch: int = 64) -> np.ndarray:
    """Eval-mode representations for an N x T x D array."""
    out = []
    with tn.no_grad():
        for s in range(0, data.shape[0], batch):
            out.append(enc.encode(data[s:s + batch], "eval").data)
    return np.concatenate(out, axis=0)


class SGD:
    """Plain gradient descent over a list of leaf tensors."""

    def __init__(self, params: list[tn.Tensor], lr: float = 1e-3):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam over a list of leaf tensors; ``lr`` may be changed between steps."""

    def __init__(self, params: list[tn.Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
