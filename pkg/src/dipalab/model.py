"""Transformer-encoder classifier with a hand-written backward pass.

Layout: input projection + sinusoidal day-of-year encoding, ``num_blocks``
post-norm encoder blocks (multi-head self-attention, GELU feed-forward),
masked mean pooling over valid positions, and a linear head.

Weights are stored ``(in, out)`` so a layer is ``x @ W + b``. Padded
positions are excluded from attention keys and from pooling, so they
never reach the logits or the gradients.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LN_EPS = 1e-9
HEAD_PREFIX = "head."


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 13
    embed_dim: int = 32
    num_heads: int = 2
    ffn_hidden: int = 64
    num_blocks: int = 1
    max_len: int = 366
    num_classes: int = 12

    def __post_init__(self):
        for name in ("channels", "embed_dim", "num_heads", "ffn_hidden", "num_blocks", "max_len", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")

    @classmethod
    def full_scale(cls, channels: int = 13, num_classes: int = 129) -> "ModelConfig":
        return cls(channels=channels, embed_dim=128, num_heads=4, ffn_hidden=256, num_classes=num_classes)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; the order is also the init and checkpoint order."""
    e, h = cfg.embed_dim, cfg.ffn_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "input.weight": (cfg.channels, e),
        "input.bias": (e,),
    }
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}."
        for proj in ("q", "k", "v", "out"):
            shapes[p + f"attn.{proj}.weight"] = (e, e)
            shapes[p + f"attn.{proj}.bias"] = (e,)
        shapes[p + "norm1.scale"] = (e,)
        shapes[p + "norm1.offset"] = (e,)
        shapes[p + "ffn.fc1.weight"] = (e, h)
        shapes[p + "ffn.fc1.bias"] = (h,)
        shapes[p + "ffn.fc2.weight"] = (h, e)
        shapes[p + "ffn.fc2.bias"] = (e,)
        shapes[p + "norm2.scale"] = (e,)
        shapes[p + "norm2.offset"] = (e,)
    shapes["head.weight"] = (e, cfg.num_classes)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def _init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".weight"):
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-limit, limit, size=shape)
    if name.endswith(".scale"):
        return np.ones(shape)
    return np.zeros(shape)


@dataclass
class Parameters:
    """Named float64 tensors with same-shape gradient accumulators."""

    tensors: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.tensors.items():
            if name not in self.grads:
                self.grads[name] = np.zeros_like(t)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def backbone_names(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith(HEAD_PREFIX)]

    def head_names(self) -> list[str]:
        return [n for n in self.tensors if n.startswith(HEAD_PREFIX)]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "Parameters":
        return Parameters(
            {n: t.copy() for n, t in self.tensors.items()},
            {n: g.copy() for n, g in self.grads.items()},
        )

    def num_classes(self) -> int:
        return self.tensors["head.bias"].shape[0]


def init_parameters(cfg: ModelConfig, rng: np.random.Generator) -> Parameters:
    """Xavier-uniform weights, zero biases, unit layer-norm scales."""
    return Parameters({n: _init_tensor(n, s, rng) for n, s in parameter_shapes(cfg).items()})


def reset_head(params: Parameters, rng: np.random.Generator, num_classes: int | None = None) -> Parameters:
    """Copy of ``params`` with a freshly drawn head, optionally for a new class count."""
    k = params.num_classes() if num_classes is None else int(num_classes)
    if k < 1:
        raise ValueError("num_classes must be >= 1")
    e = params.tensors["head.weight"].shape[0]
    tensors = {n: params.tensors[n].copy() for n in params.backbone_names()}
    grads = {n: params.grads[n].copy() for n in params.backbone_names()}
    tensors["head.weight"] = _init_tensor("head.weight", (e, k), rng)
    tensors["head.bias"] = _init_tensor("head.bias", (k,), rng)
    return Parameters(tensors, grads)


# ---------------------------------------------------------------------------
# positional encoding


def sinusoidal_encoding(day: int, embed_dim: int, max_len: int = 366) -> np.ndarray:
    if not 0 <= day < max_len:
        raise ValueError(f"day {day} outside [0, {max_len})")
    return positional_table(max_len, embed_dim)[day].copy()


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_table(max_len: int, embed_dim: int) -> np.ndarray:
    key = (max_len, embed_dim)
    if key not in _PE_CACHE:
        days = np.arange(max_len, dtype=np.float64)[:, None]
        i = np.arange(embed_dim // 2, dtype=np.float64)[None, :]
        angle = days / np.power(10000.0, 2.0 * i / embed_dim)
        table = np.empty((max_len, embed_dim))
        table[:, 0::2] = np.sin(angle)
        table[:, 1::2] = np.cos(angle)
        table.setflags(write=False)
        _PE_CACHE[key] = table
    return _PE_CACHE[key]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    values: np.ndarray  # (B, T, d), zero at padded slots
    days: np.ndarray  # (B, T) int, zero at padded slots
    mask: np.ndarray  # (B, T) bool
    lengths: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.values.shape[0]


def pack(samples, pad_to: int | None = None) -> Batch:
    """Pad a sequence of samples (objects with ``values`` and ``days``) into a Batch."""
    if len(samples) == 0:
        raise ValueError("cannot pack an empty batch")
    lengths = np.array([len(s.days) for s in samples], dtype=np.intp)
    if np.any(lengths == 0):
        raise ValueError("every sample needs at least one observation")
    d = samples[0].values.shape[1]
    t = int(lengths.max()) if pad_to is None else int(pad_to)
    if t < lengths.max():
        raise ValueError("pad_to shorter than the longest sample")
    values = np.zeros((len(samples), t, d))
    days = np.zeros((len(samples), t), dtype=np.intp)
    mask = np.zeros((len(samples), t), dtype=bool)
    for b, s in enumerate(samples):
        n = lengths[b]
        if s.values.shape[1] != d:
            raise ValueError("all samples in a batch must share the channel count")
        values[b, :n] = s.values
        days[b, :n] = s.days
        mask[b, :n] = True
    return Batch(values, days, mask, lengths)


# ---------------------------------------------------------------------------
# forward / backward

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def layer_norm(x, scale, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * scale + offset, xhat, rstd


def _layer_norm_backward(dy, xhat, rstd, scale):
    dxhat = dy * scale
    dx = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, (dy * xhat).reshape(-1, dy.shape[-1]).sum(0), dy.reshape(-1, dy.shape[-1]).sum(0)


@dataclass
class ForwardCache:
    cfg: ModelConfig
    signature: tuple
    inputs: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    blocks: list = field(default_factory=list)
    pooled: np.ndarray | None = None


def _signature(params: Parameters) -> tuple:
    return tuple((n, t.shape) for n, t in params.tensors.items())


def _split_heads(x, heads):
    b, t, e = x.shape
    return x.reshape(b, t, heads, e // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward(batch: Batch, params: Parameters, cfg: ModelConfig) -> tuple[np.ndarray, ForwardCache]:
    """Logits ``(B, K)`` and the cache needed by :func:`backward`."""
    if batch.values.shape[2] != cfg.channels:
        raise ValueError(f"expected {cfg.channels} channels, got {batch.values.shape[2]}")
    if np.any(batch.lengths < 1):
        raise ValueError("every sample needs at least one observation")
    if np.any(batch.days[batch.mask] >= cfg.max_len) or np.any(batch.days < 0):
        raise ValueError(f"day indices must lie in [0, {cfg.max_len})")
    P = params.tensors
    pe = positional_table(cfg.max_len, cfg.embed_dim)
    cache = ForwardCache(cfg, _signature(params), batch.values, batch.mask, batch.lengths)
    key_bias = np.where(batch.mask, 0.0, -np.inf)[:, None, None, :]
    scale = 1.0 / math.sqrt(cfg.embed_dim // cfg.num_heads)

    h = batch.values @ P["input.weight"] + P["input.bias"] + pe[batch.days]
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}."
        q = _split_heads(h @ P[p + "attn.q.weight"] + P[p + "attn.q.bias"], cfg.num_heads)
        k = _split_heads(h @ P[p + "attn.k.weight"] + P[p + "attn.k.bias"], cfg.num_heads)
        v = _split_heads(h @ P[p + "attn.v.weight"] + P[p + "attn.v.bias"], cfg.num_heads)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale + key_bias
        a = np.exp(s - s.max(axis=-1, keepdims=True))
        a /= a.sum(axis=-1, keepdims=True)
        o = _merge_heads(a @ v)
        r1 = h + o @ P[p + "attn.out.weight"] + P[p + "attn.out.bias"]
        h1, xhat1, rstd1 = layer_norm(r1, P[p + "norm1.scale"], P[p + "norm1.offset"])
        f1 = h1 @ P[p + "ffn.fc1.weight"] + P[p + "ffn.fc1.bias"]
        g, t = _gelu(f1)
        r2 = h1 + g @ P[p + "ffn.fc2.weight"] + P[p + "ffn.fc2.bias"]
        h2, xhat2, rstd2 = layer_norm(r2, P[p + "norm2.scale"], P[p + "norm2.offset"])
        cache.blocks.append(
            dict(h=h, q=q, k=k, v=v, a=a, o=o, h1=h1, xhat1=xhat1, rstd1=rstd1,
                 f1=f1, g=g, t=t, xhat2=xhat2, rstd2=rstd2)
        )
        h = h2
    pooled = (h * batch.mask[..., None]).sum(axis=1) / batch.lengths[:, None]
    cache.pooled = pooled
    logits = pooled @ P["head.weight"] + P["head.bias"]
    return logits, cache


def _acc(grads, name, x, dy):
    """grads[name] += x^T dy, flattening leading axes."""
    grads[name] += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def backward(cache: ForwardCache, dlogits: np.ndarray, params: Parameters) -> dict[str, np.ndarray]:
    """Accumulate d(sum of upstream-weighted logits)/d(theta) into ``params.grads``.

    Per-sample contributions are summed, not averaged; scale ``dlogits``
    by 1/B beforehand for a mean loss.
    """
    if cache.signature != _signature(params):
        raise ValueError("forward cache does not match these parameters")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (cache.inputs.shape[0], params.num_classes()):
        raise ValueError(f"upstream gradient shape {dlogits.shape} does not match logits")
    cfg = cache.cfg
    P, G = params.tensors, params.grads
    scale = 1.0 / math.sqrt(cfg.embed_dim // cfg.num_heads)

    G["head.weight"] += cache.pooled.T @ dlogits
    G["head.bias"] += dlogits.sum(0)
    dpooled = dlogits @ P["head.weight"].T
    dh = (cache.mask / cache.lengths[:, None])[..., None] * dpooled[:, None, :]

    for i in reversed(range(cfg.num_blocks)):
        p = f"blocks.{i}."
        c = cache.blocks[i]
        dr2, dsc, doff = _layer_norm_backward(dh, c["xhat2"], c["rstd2"], P[p + "norm2.scale"])
        G[p + "norm2.scale"] += dsc
        G[p + "norm2.offset"] += doff
        _acc(G, p + "ffn.fc2.weight", c["g"], dr2)
        G[p + "ffn.fc2.bias"] += dr2.reshape(-1, dr2.shape[-1]).sum(0)
        df1 = (dr2 @ P[p + "ffn.fc2.weight"].T) * _gelu_grad(c["f1"], c["t"])
        _acc(G, p + "ffn.fc1.weight", c["h1"], df1)
        G[p + "ffn.fc1.bias"] += df1.reshape(-1, df1.shape[-1]).sum(0)
        dh1 = dr2 + df1 @ P[p + "ffn.fc1.weight"].T
        dr1, dsc, doff = _layer_norm_backward(dh1, c["xhat1"], c["rstd1"], P[p + "norm1.scale"])
        G[p + "norm1.scale"] += dsc
        G[p + "norm1.offset"] += doff
        _acc(G, p + "attn.out.weight", c["o"], dr1)
        G[p + "attn.out.bias"] += dr1.reshape(-1, dr1.shape[-1]).sum(0)
        do = _split_heads(dr1 @ P[p + "attn.out.weight"].T, cfg.num_heads)
        a = c["a"]
        da = do @ c["v"].transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ c["k"]
        dk = ds.transpose(0, 1, 3, 2) @ c["q"]
        dh = dr1
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = _merge_heads(dproj)
            _acc(G, p + f"attn.{name}.weight", c["h"], dproj)
            G[p + f"attn.{name}.bias"] += dproj.reshape(-1, dproj.shape[-1]).sum(0)
            dh = dh + dproj @ P[p + f"attn.{name}.weight"].T

    _acc(G, "input.weight", cache.inputs, dh)
    G["input.bias"] += dh.reshape(-1, dh.shape[-1]).sum(0)
    return G


def predict_logits(params: Parameters, cfg: ModelConfig, samples, chunk: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(samples), chunk):
        logits, _ = forward(pack(samples[start:start + chunk]), params, cfg)
        out.append(logits)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints
#
# Binary layout, all integers little-endian:
#   magic  b"DIPACKPT"      8 bytes
#   version                 uint32 (= 1)
#   tensor count            uint32
#   per tensor, in parameter_shapes() order:
#     name length           uint16, then UTF-8 name bytes
#     ndim                  uint8, then ndim x uint64 dims
#     values                prod(dims) x float64 LE, C order

CKPT_MAGIC = b"DIPACKPT"
CKPT_VERSION = 1


def save_checkpoint(params: Parameters, path) -> None:
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(params.tensors))]
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Parameters:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return Parameters(tensors)
