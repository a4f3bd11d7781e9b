"""Density-map counting network and its checkpoint format.

Pipeline for a batch of feature sequences ``x`` of shape ``(B, L, D_in)``:

1. per-frame linear projection to ``d_model`` followed by a width-3
   temporal convolution (stand-in for a video backbone);
2. for each temporal scale ``s``, a centred sliding mean of width ``s``
   and per-head attention weights ``softmax(Q K^T / sqrt(d_head))``,
   giving ``heads`` self-similarity maps of size ``L x L``;
3. the ``len(scales) * heads`` maps go through a 3x3 conv, ReLU, and a
   per-frame flatten + projection, producing the frame embeddings ``E``;
4. pre-norm transformer encoder layer(s) and a three-layer MLP head give
   one density value per frame. The count is the sum of the densities.

Checkpoints are ``<u64 header length><JSON header><float32 blobs>``; the
header stores the model config and ``name -> {shape, offset}``.
"""

from __future__ import annotations

import functools
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    L: int = 64
    D_in: int = 16
    d_model: int = 512
    heads: int = 4
    scales: tuple = (1, 4, 8)
    fusion_channels: int = 32
    head_hidden: int = 512
    ff_hidden: int = 512
    encoder_layers: int = 1
    conv_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        for f in ("L", "D_in", "d_model", "heads", "fusion_channels", "head_hidden", "ff_hidden", "encoder_layers"):
            if int(getattr(self, f)) < 1:
                raise ConfigError(f"model {f} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not self.scales or list(self.scales) != sorted(self.scales) or self.scales[0] < 1:
            raise ConfigError(f"scales must be ascending and >= 1, got {self.scales}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError("conv_kernel must be odd")

    @property
    def d_head(self):
        return self.d_model // self.heads

    def to_dict(self):
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)


def param_shapes(cfg):
    d, dh, h = cfg.d_model, cfg.d_head, cfg.heads
    shapes = {
        "input_proj.w": (cfg.D_in, d),
        "input_proj.b": (d,),
        "temporal_conv.w": (cfg.conv_kernel, d, d),
        "temporal_conv.b": (d,),
    }
    for s in cfg.scales:
        shapes[f"sim_s{s}.wq"] = (h, d, dh)
        shapes[f"sim_s{s}.wk"] = (h, d, dh)
    c_in = len(cfg.scales) * h
    shapes["fusion_conv.w"] = (cfg.fusion_channels, c_in, 3, 3)
    shapes["fusion_conv.b"] = (cfg.fusion_channels,)
    shapes["row_proj.w"] = (cfg.L * cfg.fusion_channels, d)
    shapes["row_proj.b"] = (d,)
    for i in range(cfg.encoder_layers):
        p = f"encoder{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "wk": (d, d), p + "wv": (d, d),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff1.w": (d, cfg.ff_hidden), p + "ff1.b": (cfg.ff_hidden,),
            p + "ff2.w": (cfg.ff_hidden, d), p + "ff2.b": (d,),
        })
    shapes.update({
        "head.fc1.w": (d, cfg.head_hidden), "head.fc1.b": (cfg.head_hidden,),
        "head.fc2.w": (cfg.head_hidden, cfg.head_hidden), "head.fc2.b": (cfg.head_hidden,),
        "head.fc3.w": (cfg.head_hidden, 1), "head.fc3.b": (1,),
    })
    return shapes


def _fan_in(name, shape):
    if name.endswith("temporal_conv.w"):
        return shape[0] * shape[1]
    if name.endswith("fusion_conv.w"):
        return shape[1] * shape[2] * shape[3]
    return shape[-2]


def init_params(cfg, seed=0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit LN gains."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def check_params(params, cfg):
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing, extra = set(expected) - set(params), set(params) - set(expected)
        raise ShapeError(f"parameter names disagree with config: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, shape in expected.items():
        if tuple(np.shape(params[name])) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def pool_matrix(L, s):
    """``(L, L)`` matrix of the centred width-``s`` sliding mean with edge replication.

    Frame ``i`` averages frames ``i - s//2 .. i - s//2 + s - 1`` (clipped).
    The cached result is read-only.
    """
    A = np.zeros((L, L))
    offsets = np.arange(s) - s // 2
    for i in range(L):
        np.add.at(A[i], np.clip(i + offsets, 0, L - 1), 1.0 / s)
    A.flags.writeable = False
    return A


def context_pool(F, s):
    F = ad.as_tensor(F)
    if s < 1:
        raise ConfigError(f"scale must be >= 1, got {s}")
    if s == 1:
        return F
    return ad.matmul(Tensor(pool_matrix(F.shape[-2], s)), F)


def similarity_maps(F_s, wq, wk):
    """Per-head row-softmax attention maps ``(..., heads, L, L)``."""
    F_s = ad.as_tensor(F_s)
    lead = F_s.shape[:-2]
    L, d = F_s.shape[-2:]
    x = ad.reshape(F_s, lead + (1, L, d))
    q = ad.matmul(x, wq)
    k = ad.matmul(x, wk)
    logits = ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / math.sqrt(wq.shape[-1]))
    return ad.softmax_rows(logits)


def fuse_similarities(S_all, conv_w, conv_b, proj_w, proj_b):
    """``(..., C, L, L)`` similarity stack -> ``(..., L, d_model)`` frame embeddings."""
    S_all = ad.as_tensor(S_all)
    if S_all.shape[-3] != conv_w.shape[1]:
        raise ShapeError(f"fusion expects {conv_w.shape[1]} channels, got {S_all.shape[-3]}")
    # rescale so a uniform attention row has unit entries at any L
    S_all = ad.scale(S_all, S_all.shape[-1])
    h = ad.relu(ad.conv2d(S_all, conv_w, conv_b))  # (..., F, L, L)
    nd = h.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    rows = ad.transpose(h, axes)  # (..., L, F, L)
    lead = rows.shape[:-2]
    rows = ad.reshape(rows, lead + (rows.shape[-2] * rows.shape[-1],))
    return ad.linear(rows, proj_w, proj_b)


def encoder_layer(x, P, prefix, heads):
    """Pre-norm transformer layer: x + MHA(LN(x)), then x + FFN(LN(x))."""
    B, L, d = x.shape
    dh = d // heads
    y = ad.layer_norm(x, P[prefix + "ln1.g"], P[prefix + "ln1.b"])

    def split(t):
        return ad.transpose(ad.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(ad.matmul(y, P[prefix + "wq"]))
    k = split(ad.matmul(y, P[prefix + "wk"]))
    v = split(ad.matmul(y, P[prefix + "wv"]))
    att = ad.softmax(ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / math.sqrt(dh)))
    ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (B, L, d))
    x = x + ad.linear(ctx, P[prefix + "wo"], P[prefix + "bo"])
    y = ad.layer_norm(x, P[prefix + "ln2.g"], P[prefix + "ln2.b"])
    ff = ad.linear(ad.relu(ad.linear(y, P[prefix + "ff1.w"], P[prefix + "ff1.b"])), P[prefix + "ff2.w"], P[prefix + "ff2.b"])
    return x + ff


def as_param_tensors(params, requires_grad=False):
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def forward(x, params, cfg):
    """Return ``(E, p)`` for one sequence ``(L, D_in)`` or a batch ``(B, L, D_in)``.

    ``params`` maps names to arrays or Tensors; pass Tensors with
    ``requires_grad=True`` to train.
    """
    x = ad.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.L, cfg.D_in):
        raise ShapeError(f"expected input (B, {cfg.L}, {cfg.D_in}), got {x.shape}")
    P = as_param_tensors(params)
    B = x.shape[0]

    h = ad.linear(x, P["input_proj.w"], P["input_proj.b"])
    h = ad.relu(ad.conv1d_temporal(h, P["temporal_conv.w"], P["temporal_conv.b"]))
    maps = [
        similarity_maps(context_pool(h, s), P[f"sim_s{s}.wq"], P[f"sim_s{s}.wk"])
        for s in cfg.scales
    ]
    S = ad.concat(maps, axis=1)  # (B, scales*heads, L, L)
    E = fuse_similarities(S, P["fusion_conv.w"], P["fusion_conv.b"], P["row_proj.w"], P["row_proj.b"])

    z = E
    for i in range(cfg.encoder_layers):
        z = encoder_layer(z, P, f"encoder{i}.", cfg.heads)
    z = ad.relu(ad.linear(z, P["head.fc1.w"], P["head.fc1.b"]))
    z = ad.relu(ad.linear(z, P["head.fc2.w"], P["head.fc2.b"]))
    p = ad.reshape(ad.linear(z, P["head.fc3.w"], P["head.fc3.b"]), (B, cfg.L))
    if single:
        return E[0], p[0]
    return E, p


def count_readout(p):
    """Raw count ``sum(p)`` along the frame axis."""
    vals = p.data if isinstance(p, Tensor) else np.asarray(getattr(p, "values", p))
    total = vals.sum(axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def rounded_count(T):
    """Round-half-to-even integer count used for MAE/OBO."""
    return int(np.rint(T))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_bytes(params, cfg, extra=None):
    check_params(params, cfg)
    directory = {}
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name]), dtype="<f4")
        directory[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"config": cfg.to_dict(), "tensors": directory}
    if extra:
        header["meta"] = extra
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<Q", len(head)) + head + b"".join(blobs)


def save_checkpoint(path, params, cfg, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params, cfg, extra))
    return path


def load_checkpoint(path, expect=None):
    """Return ``(cfg, params, meta)``; shapes are validated against the stored config."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValidationError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + n])
        cfg = ModelConfig.from_dict(header["config"])
        directory = header["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed checkpoint header: {exc}") from exc
    if expect is not None and expect != cfg:
        raise ConfigError(f"checkpoint config {cfg} does not match requested {expect}")
    blob = raw[8 + n:]
    params = {}
    for name, entry in directory.items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 4 * count > len(blob):
            raise ValidationError(f"{path}: tensor {name} runs past end of file")
        params[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).astype(np.float64)
    check_params(params, cfg)
    return cfg, params, header.get("meta", {})
