"""Play-behaviour classifiers with exact forward/backward passes.

Two architectures, both tiny and CPU-friendly:

* MLP probe: one hidden GELU layer on mean-pooled embeddings or on the
  171-dim window features.
* 1D-CNN: per-timestep linear bottleneck with GELU, a single same-padded
  convolution over the segment axis, gated attention pooling
  (softmax over w.(tanh(V h) * sigmoid(U h))), then a linear head. Hybrid
  mode concatenates the standardized window features to the pooled vector
  before the head.

Everything is float64 numpy with analytic gradients (finite-difference
checked in the tests) and a from-scratch AdamW, so training is bitwise
deterministic for a fixed seed and data order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import erf

from .dataset_io import ValidationError, write_atomic

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class ModelConfig:
    variant: str                 # "mlp" or "cnn"
    d_in: int                    # token dim (embeddings) or input dim (feature MLP)
    k: int = 32                  # segments after adaptive pooling (cnn only)
    h_bottleneck: int = 256
    h_conv: int = 256
    kernel: int = 3
    h_attn: int = 128
    n_classes: int = 3
    hybrid: bool = False
    feature_dim: int = 171

    def __post_init__(self) -> None:
        if self.variant not in ("mlp", "cnn"):
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.kernel % 2 != 1:
            raise ValidationError("conv kernel must be odd for same padding")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.hybrid and self.variant != "cnn":
            raise ValidationError("hybrid concatenation applies to the cnn variant")


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    label_smoothing: float = 0.1
    class_weights: str = "inv_sqrt"   # or "none"
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValidationError("label smoothing must be in [0, 1)")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.class_weights not in ("inv_sqrt", "none"):
            raise ValidationError(f"unknown class_weights mode {self.class_weights!r}")


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / SQRT2)) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def adaptive_avg_pool(tokens: np.ndarray, k: int) -> np.ndarray:
    """Compress (F_w, D) tokens into (k, D) segment means.

    Segment i averages rows [floor(i*F/k), floor((i+1)*F/k)); when F < k the
    empty segments copy the nearest non-empty segment's mean before them
    (after them for a leading empty run).
    """
    tokens = np.asarray(tokens, dtype=float)
    f_w = tokens.shape[0]
    if f_w < 1:
        raise ValidationError("adaptive pooling needs at least one token")
    out = np.full((k, tokens.shape[1]), np.nan)
    filled = np.zeros(k, bool)
    for i in range(k):
        lo = (i * f_w) // k
        hi = ((i + 1) * f_w) // k
        if hi > lo:
            out[i] = tokens[lo:hi].mean(axis=0)
            filled[i] = True
    last = None
    for i in range(k):
        if filled[i]:
            last = i
        elif last is not None:
            out[i] = out[last]
    first = int(np.flatnonzero(filled)[0])
    for i in range(first):
        out[i] = out[first]
    return out


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    p: dict[str, np.ndarray] = {}
    if config.variant == "mlp":
        p["w1"] = uniform((config.d_in, config.h_bottleneck), config.d_in)
        p["b1"] = uniform((config.h_bottleneck,), config.d_in)
        p["w_head"] = uniform((config.h_bottleneck, config.n_classes), config.h_bottleneck)
        p["b_head"] = uniform((config.n_classes,), config.h_bottleneck)
        return p
    p["w_bottleneck"] = uniform((config.d_in, config.h_bottleneck), config.d_in)
    p["b_bottleneck"] = uniform((config.h_bottleneck,), config.d_in)
    fan_conv = config.kernel * config.h_bottleneck
    p["w_conv"] = uniform((config.kernel, config.h_bottleneck, config.h_conv), fan_conv)
    p["b_conv"] = uniform((config.h_conv,), fan_conv)
    p["attn_v"] = uniform((config.h_conv, config.h_attn), config.h_conv)
    p["attn_u"] = uniform((config.h_conv, config.h_attn), config.h_conv)
    p["attn_w"] = uniform((config.h_attn,), config.h_attn)
    head_in = config.h_conv + (config.feature_dim if config.hybrid else 0)
    p["w_head"] = uniform((head_in, config.n_classes), head_in)
    p["b_head"] = uniform((config.n_classes,), head_in)
    return p


def _conv_windows(x: np.ndarray, kernel: int) -> np.ndarray:
    """(B, K, H) -> (B, K, kernel, H) zero-padded sliding windows."""
    b, k, h = x.shape
    pad = kernel // 2
    xp = np.zeros((b, k + 2 * pad, h))
    xp[:, pad:pad + k] = x
    return np.stack([xp[:, t:t + k] for t in range(kernel)], axis=2)


def forward(params: dict[str, np.ndarray], config: ModelConfig, tokens: np.ndarray,
            features: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Batched forward pass.

    ``tokens``: (B, K, D) for the cnn variant, (B, D) for the mlp probe.
    ``features``: (B, feature_dim), hybrid only. Returns (logits, cache).
    """
    cache: dict = {"tokens": tokens, "features": features}
    if config.variant == "mlp":
        if tokens.ndim != 2 or tokens.shape[1] != config.d_in:
            raise ValidationError(f"mlp input must be (B, {config.d_in}), got {tokens.shape}")
        pre1 = tokens @ params["w1"] + params["b1"]
        hid = gelu(pre1)
        logits = hid @ params["w_head"] + params["b_head"]
        cache.update(pre1=pre1, hid=hid)
        return logits, cache

    if tokens.ndim != 3 or tokens.shape[1] != config.k or tokens.shape[2] != config.d_in:
        raise ValidationError(f"cnn input must be (B, {config.k}, {config.d_in}), got {tokens.shape}")
    if config.hybrid:
        if features is None or features.shape != (tokens.shape[0], config.feature_dim):
            raise ValidationError("hybrid forward needs (B, feature_dim) features")
    pre_b = tokens @ params["w_bottleneck"] + params["b_bottleneck"]   # (B,K,Hb)
    act_b = gelu(pre_b)
    windows = _conv_windows(act_b, config.kernel)                      # (B,K,kern,Hb)
    conv = np.einsum("bktj,tjo->bko", windows, params["w_conv"]) + params["b_conv"]  # (B,K,Hc)
    tanh_part = np.tanh(conv @ params["attn_v"])                       # (B,K,Ha)
    sig_part = 1.0 / (1.0 + np.exp(-(conv @ params["attn_u"])))        # (B,K,Ha)
    gate = tanh_part * sig_part
    scores = gate @ params["attn_w"]                                   # (B,K)
    scores_shift = scores - scores.max(axis=1, keepdims=True)
    expo = np.exp(scores_shift)
    attn = expo / expo.sum(axis=1, keepdims=True)                      # (B,K)
    pooled = np.einsum("bk,bko->bo", attn, conv)                       # (B,Hc)
    head_in = np.concatenate([pooled, features], axis=1) if config.hybrid else pooled
    logits = head_in @ params["w_head"] + params["b_head"]
    cache.update(pre_b=pre_b, act_b=act_b, windows=windows, conv=conv,
                 tanh_part=tanh_part, sig_part=sig_part, gate=gate,
                 attn=attn, pooled=pooled, head_in=head_in)
    return logits, cache


def backward(params: dict[str, np.ndarray], config: ModelConfig, cache: dict,
             dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients for every parameter given d(loss)/d(logits)."""
    grads: dict[str, np.ndarray] = {}
    if config.variant == "mlp":
        hid, pre1, tokens = cache["hid"], cache["pre1"], cache["tokens"]
        grads["w_head"] = hid.T @ dlogits
        grads["b_head"] = dlogits.sum(axis=0)
        dhid = dlogits @ params["w_head"].T
        dpre1 = dhid * gelu_grad(pre1)
        grads["w1"] = tokens.T @ dpre1
        grads["b1"] = dpre1.sum(axis=0)
        return grads

    head_in, attn, conv = cache["head_in"], cache["attn"], cache["conv"]
    gate, tanh_part, sig_part = cache["gate"], cache["tanh_part"], cache["sig_part"]
    windows, act_b, pre_b, tokens = cache["windows"], cache["act_b"], cache["pre_b"], cache["tokens"]

    grads["w_head"] = head_in.T @ dlogits
    grads["b_head"] = dlogits.sum(axis=0)
    dhead_in = dlogits @ params["w_head"].T
    dpooled = dhead_in[:, :config.h_conv] if config.hybrid else dhead_in

    # pooled = sum_k attn_k * conv_k
    dattn = np.einsum("bo,bko->bk", dpooled, conv)
    dconv = attn[:, :, None] * dpooled[:, None, :]
    # softmax backward
    dscores = attn * (dattn - np.sum(dattn * attn, axis=1, keepdims=True))
    dgate = dscores[:, :, None] * params["attn_w"]
    grads["attn_w"] = np.einsum("bk,bkh->h", dscores, gate)
    dtanh = dgate * sig_part
    dsig = dgate * tanh_part
    dpre_v = dtanh * (1.0 - tanh_part ** 2)
    dpre_u = dsig * sig_part * (1.0 - sig_part)
    grads["attn_v"] = np.einsum("bko,bkh->oh", conv, dpre_v)
    grads["attn_u"] = np.einsum("bko,bkh->oh", conv, dpre_u)
    dconv = dconv + dpre_v @ params["attn_v"].T + dpre_u @ params["attn_u"].T

    grads["w_conv"] = np.einsum("bktj,bko->tjo", windows, dconv)
    grads["b_conv"] = dconv.sum(axis=(0, 1))
    # conv transpose back onto the padded activation windows
    dwindows = np.einsum("bko,tjo->bktj", dconv, params["w_conv"])
    b, k, _ = act_b.shape
    pad = config.kernel // 2
    dact_pad = np.zeros((b, k + 2 * pad, config.h_bottleneck))
    for t in range(config.kernel):
        dact_pad[:, t:t + k] += dwindows[:, :, t]
    dact_b = dact_pad[:, pad:pad + k]
    dpre_b = dact_b * gelu_grad(pre_b)
    grads["w_bottleneck"] = np.einsum("bkd,bkh->dh", tokens, dpre_b)
    grads["b_bottleneck"] = dpre_b.sum(axis=(0, 1))
    return grads


# --- loss ------------------------------------------------------------------------

def inv_sqrt_class_weights(counts: np.ndarray) -> np.ndarray:
    """w_c proportional to 1/sqrt(n_c), normalised to mean 1.

    A class absent from the split falls back to count 1 (callers warn).
    """
    counts = np.asarray(counts, dtype=float)
    counts = np.where(counts > 0, counts, 1.0)
    w = 1.0 / np.sqrt(counts)
    return w / w.mean()


def loss_and_grad(logits: np.ndarray, y: np.ndarray, class_weights: np.ndarray,
                  alpha: float) -> tuple[float, np.ndarray]:
    """Weighted label-smoothed cross entropy, normalised by the batch weight sum.

    Per-sample: w_y * -(sum_c t_c log softmax_c) with
    t_c = (1-alpha)*[c==y] + alpha/C; returns (loss, d loss/d logits).
    """
    n, c = logits.shape
    shift = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shift)
    probs = expl / expl.sum(axis=1, keepdims=True)
    logp = shift - np.log(expl.sum(axis=1, keepdims=True))
    targets = np.full((n, c), alpha / c)
    targets[np.arange(n), y] += 1.0 - alpha
    w = class_weights[y]
    wsum = w.sum()
    loss = float(-(w[:, None] * targets * logp).sum() / wsum)
    dlogits = w[:, None] * (probs - targets) / wsum
    return loss, dlogits


# --- optimizer --------------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, config: TrainConfig) -> None:
    """One decoupled-weight-decay Adam step, in place.

    p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"non-finite gradient for {name!r}; step rejected")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        decay = config.lr * config.weight_decay * p  # decay on the pre-step value
        p -= config.lr * (m_hat / (np.sqrt(v_hat) + config.eps))
        p -= decay
    return None


# --- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"PLYCKPT1"


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig,
                    extra: dict | None = None) -> None:
    """Versioned binary: magic, JSON config echo, then named float64 LE tensors."""
    blob = bytearray()
    blob += CKPT_MAGIC
    meta = {"config": asdict(config), "extra": extra or {}}
    mb = json.dumps(meta, sort_keys=True).encode()
    blob += struct.pack("<I", len(mb))
    blob += mb
    names = sorted(params)
    blob += struct.pack("<I", len(names))
    for name in names:
        nb = name.encode()
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}q", *arr.shape)
        blob += arr.tobytes()
    write_atomic(path, bytes(blob))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    off = 8
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = json.loads(data[off:off + mlen].decode())
    off += mlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
        params[name] = arr
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes after tensor table")
    config = ModelConfig(**meta["config"])
    return params, config, meta.get("extra", {})
