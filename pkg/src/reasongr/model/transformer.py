"""One-layer, one-head pre-LN encoder-decoder with LoRA on a frozen base.

Every projection is ``y = x W^T + s (x B) A^T`` where ``W`` is the
dequantized frozen base and ``(A, B)`` an optional adapter. Activations are
row vectors batched as (batch, time, features); padding sits at the end of
each row and is masked out of attention keys and the loss.

Gradients are derived by hand and flow to adapter factors (and, optionally,
layer-norm parameters); the base never receives an update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lora import LoraAdapter, init_lora
from .quant import QuantizedMatrix, dequantize, quantize_4bit
from ..tokenizer import EOS, PAD

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

ATTN_BLOCKS = ("enc.attn", "dec.self", "dec.cross")
ATTN_MATRICES = tuple(f"{blk}.{p}" for blk in ATTN_BLOCKS for p in "qkvo")
FFN_MATRICES = ("enc.ff1", "enc.ff2", "dec.ff1", "dec.ff2")
MATRICES = ("emb",) + ATTN_MATRICES + FFN_MATRICES + ("out",)
NORMS = ("enc.ln1", "enc.ln2", "enc.lnf", "dec.ln1", "dec.ln2", "dec.ln3", "dec.lnf")
DEFAULT_TARGETS = ATTN_MATRICES + ("out",)


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    d_model: int = 64
    d_ff: int = 128
    max_src_len: int = 128
    max_tgt_len: int = 48

    def matrix_shape(self, name: str) -> tuple[int, int]:
        d, f, v = self.d_model, self.d_ff, self.vocab_size
        if name in ("emb", "out"):
            return (v, d)
        if name.endswith("ff1"):
            return (f, d)
        if name.endswith("ff2"):
            return (d, f)
        return (d, d)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


@dataclass
class SeqModel:
    dims: ModelDims
    weights: dict[str, np.ndarray]
    norms: dict[str, tuple[np.ndarray, np.ndarray]]
    quantized: dict[str, QuantizedMatrix] | None = None
    block_size: int = 64
    pe_scale: float = 1.0
    pe: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = max(self.dims.max_src_len, self.dims.max_tgt_len)
        self.pe = sinusoidal_positions(n, self.dims.d_model) * self.pe_scale
        for name in MATRICES:
            if self.weights[name].shape != self.dims.matrix_shape(name):
                raise ValueError(f"{name}: shape {self.weights[name].shape} != {self.dims.matrix_shape(name)}")
            self.weights[name].setflags(write=False)

    @classmethod
    def from_quantized(cls, dims: ModelDims, quantized: dict[str, QuantizedMatrix],
                       norms, block_size: int, pe_scale: float = 1.0) -> "SeqModel":
        weights = {name: dequantize(q) for name, q in quantized.items()}
        return cls(dims, weights, norms, quantized, block_size, pe_scale)


def init_model(dims: ModelDims, rng: np.random.Generator, *, block_size: int = 64,
               quantize: bool = True, pe_scale: float = 1.0) -> SeqModel:
    """Build and freeze a base model.

    The frozen base stands in for a pretrained backbone, so it is not purely
    random: value/output projections of each attention block are transposed
    orthogonal pairs (their product is the identity) and the output head is
    the embedding table scaled by ``1/sqrt(d)``. Source tokens can therefore
    reach the logits through cross-attention before any adaptation.
    """
    d, f, v = dims.d_model, dims.d_ff, dims.vocab_size
    w: dict[str, np.ndarray] = {}
    w["emb"] = rng.standard_normal((v, d))
    for blk in ATTN_BLOCKS:
        w[f"{blk}.q"] = rng.standard_normal((d, d)) / math.sqrt(d)
        w[f"{blk}.k"] = rng.standard_normal((d, d)) / math.sqrt(d)
        qm, _ = np.linalg.qr(rng.standard_normal((d, d)))
        w[f"{blk}.v"] = qm
        w[f"{blk}.o"] = qm.T.copy()
    for side in ("enc", "dec"):
        w[f"{side}.ff1"] = rng.standard_normal((f, d)) / math.sqrt(d)
        w[f"{side}.ff2"] = 0.5 * rng.standard_normal((d, f)) / math.sqrt(f)
    w["out"] = w["emb"] / math.sqrt(d)
    norms = {n: (np.ones(d), np.zeros(d)) for n in NORMS}
    if not quantize:
        return SeqModel(dims, w, norms, None, block_size, pe_scale)
    quantized = {name: quantize_4bit(w[name], block_size) for name in MATRICES}
    return SeqModel.from_quantized(dims, quantized, norms, block_size, pe_scale)


def init_adapters(model: SeqModel, rank: int, rng: np.random.Generator,
                  targets: Iterable[str] = DEFAULT_TARGETS, alpha: float | None = None) -> dict[str, LoraAdapter]:
    adapters = {}
    for name in targets:
        d, k = model.dims.matrix_shape(name)
        adapters[name] = init_lora(d, k, rank, rng, target=name, alpha=alpha)
    return adapters


# ---------------------------------------------------------------- primitives

def _linear(x, W, ad):
    y = x @ W.T
    if ad is None:
        return y, None
    xb = x @ ad.B
    return y + ad.scale * (xb @ ad.A.T), xb


def _linear_back(gy, x, xb, W, ad, grads, name):
    gx = gy @ W
    if ad is not None:
        gyA = gy @ ad.A
        gx = gx + ad.scale * (gyA @ ad.B.T)
        gy2 = gy.reshape(-1, gy.shape[-1])
        gA = ad.scale * (gy2.T @ xb.reshape(-1, xb.shape[-1]))
        gB = ad.scale * (x.reshape(-1, x.shape[-1]).T @ gyA.reshape(-1, gyA.shape[-1]))
        ga, gb = grads.setdefault(name, (np.zeros_like(ad.A), np.zeros_like(ad.B)))
        ga += gA
        gb += gB
    return gx


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(gy, cache, g, norm_grads, name):
    xhat, inv = cache
    if norm_grads is not None:
        gg, gb = norm_grads.setdefault(name, (np.zeros_like(g), np.zeros_like(g)))
        gg += (gy * xhat).reshape(-1, gy.shape[-1]).sum(axis=0)
        gb += gy.reshape(-1, gy.shape[-1]).sum(axis=0)
    gxh = gy * g
    return inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                  - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(gy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _softmax_masked(s, mask):
    s = np.where(mask, s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- blocks

class _Ctx:
    """Weights, adapters and gradient sinks for one forward/backward pass."""

    def __init__(self, model: SeqModel, adapters: dict[str, LoraAdapter], train_norms: bool = False):
        self.model = model
        self.adapters = adapters if adapters is not None else {}
        self.W = model.weights
        self.train_norms = train_norms

    def lin(self, name, x):
        return _linear(x, self.W[name], self.adapters.get(name))

    def lin_back(self, name, gy, x, xb, grads):
        return _linear_back(gy, x, xb, self.W[name], self.adapters.get(name), grads, name)

    def ln(self, name, x):
        g, b = self.model.norms[name]
        return _layernorm(x, g, b)

    def ln_back(self, name, gy, cache, norm_grads):
        return _layernorm_back(gy, cache, self.model.norms[name][0], norm_grads, name)


def _attn(ctx, blk, xq, xkv, mask):
    q, qb = ctx.lin(f"{blk}.q", xq)
    k, kb = ctx.lin(f"{blk}.k", xkv)
    v, vb = ctx.lin(f"{blk}.v", xkv)
    scale = 1.0 / math.sqrt(q.shape[-1])
    p = _softmax_masked((q @ k.swapaxes(-1, -2)) * scale, mask)
    o = p @ v
    out, ob = ctx.lin(f"{blk}.o", o)
    return out, (xq, xkv, q, qb, k, kb, v, vb, p, o, ob, scale)


def _attn_back(ctx, blk, gout, cache, grads):
    xq, xkv, q, qb, k, kb, v, vb, p, o, ob, scale = cache
    go = ctx.lin_back(f"{blk}.o", gout, o, ob, grads)
    gp = go @ v.swapaxes(-1, -2)
    gv = p.swapaxes(-1, -2) @ go
    gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
    gq = gs @ k
    gk = gs.swapaxes(-1, -2) @ q
    gxq = ctx.lin_back(f"{blk}.q", gq, xq, qb, grads)
    gxkv = ctx.lin_back(f"{blk}.k", gk, xkv, kb, grads) + ctx.lin_back(f"{blk}.v", gv, xkv, vb, grads)
    return gxq, gxkv


def _ffn(ctx, side, x):
    pre, pb = ctx.lin(f"{side}.ff1", x)
    h, t = _gelu(pre)
    y, hb = ctx.lin(f"{side}.ff2", h)
    return y, (x, pre, pb, h, t, hb)


def _ffn_back(ctx, side, gy, cache, grads):
    x, pre, pb, h, t, hb = cache
    gh = ctx.lin_back(f"{side}.ff2", gy, h, hb, grads)
    gpre = _gelu_back(gh, pre, t)
    return ctx.lin_back(f"{side}.ff1", gpre, x, pb, grads)


def _embed(model: SeqModel, ids: np.ndarray) -> np.ndarray:
    return model.weights["emb"][ids] + model.pe[: ids.shape[-1]]


def _encode(ctx, src, src_mask):
    x0 = _embed(ctx.model, src)
    key_mask = src_mask[:, None, :]
    a, c_ln1 = ctx.ln("enc.ln1", x0)
    att, c_att = _attn(ctx, "enc.attn", a, a, key_mask)
    x1 = x0 + att
    b, c_ln2 = ctx.ln("enc.ln2", x1)
    ff, c_ff = _ffn(ctx, "enc", b)
    x2 = x1 + ff
    enc, c_lnf = ctx.ln("enc.lnf", x2)
    return enc, (c_ln1, c_att, c_ln2, c_ff, c_lnf)


def _encode_back(ctx, genc, cache, grads, norm_grads):
    c_ln1, c_att, c_ln2, c_ff, c_lnf = cache
    gx2 = ctx.ln_back("enc.lnf", genc, c_lnf, norm_grads)
    gb = _ffn_back(ctx, "enc", gx2, c_ff, grads)
    gx1 = gx2 + ctx.ln_back("enc.ln2", gb, c_ln2, norm_grads)
    gq, gkv = _attn_back(ctx, "enc.attn", gx1, c_att, grads)
    if norm_grads is not None:
        ctx.ln_back("enc.ln1", gq + gkv, c_ln1, norm_grads)


def _decode(ctx, tgt, enc, src_mask):
    T = tgt.shape[-1]
    y0 = _embed(ctx.model, tgt)
    causal = np.tril(np.ones((T, T), dtype=bool))[None]
    c, c_ln1 = ctx.ln("dec.ln1", y0)
    sa, c_sa = _attn(ctx, "dec.self", c, c, causal)
    y1 = y0 + sa
    e, c_ln2 = ctx.ln("dec.ln2", y1)
    ca, c_ca = _attn(ctx, "dec.cross", e, enc, src_mask[:, None, :])
    y2 = y1 + ca
    f, c_ln3 = ctx.ln("dec.ln3", y2)
    ff, c_ff = _ffn(ctx, "dec", f)
    y3 = y2 + ff
    h, c_lnf = ctx.ln("dec.lnf", y3)
    logits, hb = ctx.lin("out", h)
    return logits, (c_ln1, c_sa, c_ln2, c_ca, c_ln3, c_ff, c_lnf, h, hb)


def _decode_back(ctx, glogits, cache, grads, norm_grads):
    c_ln1, c_sa, c_ln2, c_ca, c_ln3, c_ff, c_lnf, h, hb = cache
    gh = ctx.lin_back("out", glogits, h, hb, grads)
    gy3 = ctx.ln_back("dec.lnf", gh, c_lnf, norm_grads)
    gf = _ffn_back(ctx, "dec", gy3, c_ff, grads)
    gy2 = gy3 + ctx.ln_back("dec.ln3", gf, c_ln3, norm_grads)
    ge, genc = _attn_back(ctx, "dec.cross", gy2, c_ca, grads)
    gy1 = gy2 + ctx.ln_back("dec.ln2", ge, c_ln2, norm_grads)
    gq, gkv = _attn_back(ctx, "dec.self", gy1, c_sa, grads)
    if norm_grads is not None:
        ctx.ln_back("dec.ln1", gq + gkv, c_ln1, norm_grads)
    return genc


# ---------------------------------------------------------------- public API

@dataclass
class Batch:
    src: np.ndarray        # (B, S) int64, PAD-padded
    src_mask: np.ndarray   # (B, S) bool
    tgt_in: np.ndarray     # (B, T) BOS-prefixed
    tgt_out: np.ndarray    # (B, T) EOS-terminated
    tgt_mask: np.ndarray   # (B, T) bool

    @property
    def size(self) -> int:
        return self.src.shape[0]


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def make_batch(srcs: Sequence[Sequence[int]], tgts: Sequence[Sequence[int]], bos: int = 1) -> Batch:
    """Teacher-forcing batch: decoder reads ``[BOS] + tgt`` and predicts ``tgt + [EOS]``."""
    if any(len(s) == 0 for s in srcs):
        raise ValueError("empty source sequence")
    src, src_mask = pad_batch(srcs)
    tgt_in, tgt_mask = pad_batch([[bos] + list(t) for t in tgts])
    tgt_out, _ = pad_batch([list(t) + [EOS] for t in tgts])
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask)


def _check_lengths(model: SeqModel, src_len: int, tgt_len: int) -> None:
    if src_len == 0:
        raise ValueError("empty source sequence")
    if tgt_len == 0:
        raise ValueError("empty target prefix (callers pass BOS)")
    if src_len > model.dims.max_src_len:
        raise ValueError(f"source length {src_len} > max_src_len {model.dims.max_src_len}")
    if tgt_len > model.dims.max_tgt_len:
        raise ValueError(f"target length {tgt_len} > max_tgt_len {model.dims.max_tgt_len}")


def encode_batch(model: SeqModel, adapters, src: np.ndarray, src_mask: np.ndarray) -> np.ndarray:
    _check_lengths(model, src.shape[-1], 1)
    enc, _ = _encode(_Ctx(model, adapters), src, src_mask)
    return enc


def decode_batch(model: SeqModel, adapters, enc: np.ndarray, src_mask: np.ndarray,
                 tgt_prefix: np.ndarray) -> np.ndarray:
    """Logits (B, T, V) for every prefix position given a precomputed encoding."""
    _check_lengths(model, enc.shape[1], tgt_prefix.shape[-1])
    logits, _ = _decode(_Ctx(model, adapters), tgt_prefix, enc, src_mask)
    return logits


def forward(model: SeqModel, adapters, src: Sequence[int], tgt_prefix: Sequence[int]) -> np.ndarray:
    """Logits (len(tgt_prefix), V) for one example; row p sees tgt_prefix[:p+1]."""
    src_a = np.asarray(src, dtype=np.int64)[None]
    tgt_a = np.asarray(tgt_prefix, dtype=np.int64)[None]
    _check_lengths(model, src_a.shape[1], tgt_a.shape[1])
    mask = np.ones_like(src_a, dtype=bool)
    ctx = _Ctx(model, adapters)
    enc, _ = _encode(ctx, src_a, mask)
    logits, _ = _decode(ctx, tgt_a, enc, mask)
    return logits[0]


def _log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class StepResult:
    loss: float                   # sum_i scale_i * CE_i
    ce: np.ndarray                # per-example token-averaged CE
    logits: np.ndarray            # (B, T, V)
    grads: dict[str, tuple[np.ndarray, np.ndarray]]
    norm_grads: dict[str, tuple[np.ndarray, np.ndarray]] | None = None


def forward_backward(model: SeqModel, adapters: dict[str, LoraAdapter], batch: Batch,
                     loss_scale: np.ndarray | float | None = None, *,
                     penalty=None, train_norms: bool = False) -> StepResult:
    """Teacher-forced loss ``sum_i scale_i * CE_i`` and its exact gradients.

    ``loss_scale`` defaults to ``1/B`` per example. If ``penalty`` is given,
    it is called as ``penalty(logits_i, target_i)`` after the forward pass and
    its value multiplies that example's scale (treated as a constant).
    """
    B, T = batch.tgt_in.shape
    _check_lengths(model, batch.src.shape[1], T)
    ctx = _Ctx(model, adapters, train_norms)
    enc, enc_cache = _encode(ctx, batch.src, batch.src_mask)
    logits, dec_cache = _decode(ctx, batch.tgt_in, enc, batch.src_mask)

    lp = _log_softmax(logits)
    counts = batch.tgt_mask.sum(axis=1).astype(np.float64)
    picked = np.take_along_axis(lp, batch.tgt_out[..., None], axis=-1)[..., 0]
    ce = -(picked * batch.tgt_mask).sum(axis=1) / counts

    scale = np.full(B, 1.0 / B) if loss_scale is None else np.broadcast_to(
        np.asarray(loss_scale, dtype=np.float64), (B,)).copy()
    if penalty is not None:
        for i in range(B):
            n = int(counts[i])
            scale[i] *= penalty(logits[i, :n], batch.tgt_out[i, :n])
    loss = float((scale * ce).sum())

    glogits = np.exp(lp)
    np.put_along_axis(glogits, batch.tgt_out[..., None],
                      np.take_along_axis(glogits, batch.tgt_out[..., None], axis=-1) - 1.0, axis=-1)
    glogits *= (batch.tgt_mask * (scale / counts)[:, None])[..., None]

    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    norm_grads = {} if train_norms else None
    genc = _decode_back(ctx, glogits, dec_cache, grads, norm_grads)
    _encode_back(ctx, genc, enc_cache, grads, norm_grads)
    for name, ad in adapters.items():
        grads.setdefault(name, (np.zeros_like(ad.A), np.zeros_like(ad.B)))
    return StepResult(loss, ce, logits, grads, norm_grads)


def backward(model: SeqModel, adapters, src: Sequence[int], tgt: Sequence[int],
             loss_scale: float = 1.0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``loss_scale * CE(tgt)`` for a single example."""
    if len(tgt) == 0:
        raise ValueError("empty target")
    return forward_backward(model, adapters, make_batch([src], [tgt]), loss_scale).grads


def example_loss(model: SeqModel, adapters, src: Sequence[int], tgt: Sequence[int]) -> float:
    """Token-averaged CE of ``tgt + [EOS]`` under teacher forcing (used by oracles)."""
    batch = make_batch([src], [tgt])
    logits = forward(model, adapters, batch.src[0], batch.tgt_in[0])
    lp = _log_softmax(logits)
    return float(-lp[np.arange(len(batch.tgt_out[0])), batch.tgt_out[0]].mean())
