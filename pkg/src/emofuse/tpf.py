"""Text-guided progressive fusion.

A stack of J core-enhancement encoder layers (CEU) interleaved with K = J+1
minor-fusion units (MFU). Each MFU cross-attends from the current core text
feature into the layer-0 enhanced audio and visual features, takes a learnable
weighted sum on top of the running minor state, and mixes through a fully
connected layer. A final cross-modal attention fuses core into minor, and a
mean-pool head produces the prediction.
"""

from __future__ import annotations

import numpy as np

from emofuse import tensor as T
from emofuse.blocks import LinearLayer, Module, MultiHeadAttention, RngSource, TransformerEncoderLayer
from emofuse.encoder import (
    STAGE_CORE,
    STAGE_ENHANCED,
    STAGE_FUSED,
    STAGE_MINOR,
    UnifiedFeature,
)
from emofuse.tensor import Parameter, ShapeError, Tensor


class MFULayer(Module):
    """One minor-modality fusion unit.

    minor_out = FC(minor_prev + alpha * attn(text -> audio) + beta * attn(text -> visual))
    with alpha and beta learnable scalars starting at 1, and the FC starting
    near identity so early training behaves like the bare weighted sum.
    """

    def __init__(self, dim, heads, dropout_rate=0.0, rng=None, rng_src: RngSource | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.attn_audio = MultiHeadAttention(dim, heads, dropout_rate, rng=rng, rng_src=rng_src, dtype=dtype)
        self.attn_visual = MultiHeadAttention(dim, heads, dropout_rate, rng=rng, rng_src=rng_src, dtype=dtype)
        self.alpha = Parameter(np.asarray(1.0, dtype=dtype))
        self.beta = Parameter(np.asarray(1.0, dtype=dtype))
        self.post = LinearLayer(dim, dim, rng=rng, dtype=dtype)
        self.post.weight.data = (np.eye(dim) + rng.normal(0, 0.02, size=(dim, dim))).astype(dtype)

    def forward(self, h_t: Tensor, h0_a: Tensor, h0_v: Tensor, h_m_prev: Tensor) -> Tensor:
        t2a = self.attn_audio(h_t, h0_a)
        t2v = self.attn_visual(h_t, h0_v)
        s = T.add(h_m_prev, T.add(T.mul(self.alpha, t2a), T.mul(self.beta, t2v)))
        return self.post(s)

    __call__ = forward


class TPFStack(Module):
    """Interleaved CEU/MFU stack; construction enforces K = J + 1."""

    def __init__(self, dim, t_len, heads, ceu_layers, mfu_layers, ffn_factor=4,
                 dropout_rate=0.1, rng=None, rng_src=None, dtype=np.float32):
        super().__init__()
        if mfu_layers != ceu_layers + 1:
            raise ValueError(
                f"stack needs one more fusion unit than enhancement unit: "
                f"got {mfu_layers} MFU vs {ceu_layers} CEU"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.t_len = t_len
        self.ceus = [
            TransformerEncoderLayer(dim, heads, ffn_factor, dropout_rate, rng=rng, rng_src=rng_src, dtype=dtype)
            for _ in range(ceu_layers)
        ]
        self.mfus = [
            MFULayer(dim, heads, dropout_rate, rng=rng, rng_src=rng_src, dtype=dtype)
            for _ in range(mfu_layers)
        ]
        self.h0_m = Parameter(rng.normal(0, 0.02, size=(t_len, dim)).astype(dtype))

    @property
    def depth_j(self):
        return len(self.ceus)

    @property
    def depth_k(self):
        return len(self.mfus)

    def ceu_forward(self, h_t: UnifiedFeature, j: int) -> UnifiedFeature:
        """Run the j-th (1-based) core-enhancement layer."""
        if not 1 <= j <= self.depth_j:
            raise ValueError(f"CEU index {j} out of range 1..{self.depth_j}")
        if h_t.stage != STAGE_CORE:
            raise ValueError(f"CEU consumes core-stage features, got {h_t.stage!r}")
        out = self.ceus[j - 1](h_t.data)
        return UnifiedFeature(out, "text", STAGE_CORE)

    def mfu_forward(self, h_t: UnifiedFeature, h0_a: UnifiedFeature, h0_v: UnifiedFeature,
                    h_m_prev: Tensor, k: int) -> Tensor:
        """Run the k-th (1-based) fusion unit against the layer-0 minor features."""
        if not 1 <= k <= self.depth_k:
            raise ValueError(f"MFU index {k} out of range 1..{self.depth_k}")
        for f in (h_t, h0_a, h0_v):
            if f.shape[-2:] != (self.t_len, self.dim):
                raise ShapeError(f"fusion inputs must be {(self.t_len, self.dim)}, got {f.shape}")
        return self.mfus[k - 1](h_t.data, h0_a.data, h0_v.data, h_m_prev)

    def forward(self, h0_t: UnifiedFeature, h0_a: UnifiedFeature, h0_v: UnifiedFeature):
        """Progressively fuse; returns (final core H^J_t, final minor H^K_m)."""
        for f, name in ((h0_t, "text"), (h0_a, "audio"), (h0_v, "visual")):
            if f.stage != STAGE_ENHANCED:
                raise ValueError(f"TPF consumes enhanced features, {name} is {f.stage!r}")
        h_t = h0_t.with_stage(STAGE_CORE)
        h_m: Tensor = self.h0_m
        for k in range(1, self.depth_k + 1):
            h_m = self.mfu_forward(h_t, h0_a, h0_v, h_m, k)
            if k <= self.depth_j:
                h_t = self.ceu_forward(h_t, k)
        return h_t, UnifiedFeature(h_m, "minor", STAGE_MINOR)

    __call__ = forward


def ultimate_fusion(block: MultiHeadAttention, h_t: UnifiedFeature, h_m: UnifiedFeature) -> UnifiedFeature:
    """Final cross-modal attention: core feature queries the minor feature."""
    if h_t.stage != STAGE_CORE or h_m.stage != STAGE_MINOR:
        raise ValueError(f"fusion expects (core, minor), got ({h_t.stage!r}, {h_m.stage!r})")
    out = block(h_t.data, h_m.data)
    return UnifiedFeature(out, "fused", STAGE_FUSED)


class PredictionHead(Module):
    """Mean-pool over T then a linear map to one score or C logits."""

    def __init__(self, dim, task="regression", num_classes=1, rng=None, dtype=np.float32):
        super().__init__()
        if task not in ("regression", "classification"):
            raise ValueError(f"unknown task {task!r}")
        if task == "classification" and num_classes < 2:
            raise ValueError("classification needs >= 2 classes")
        self.task = task
        out_dim = 1 if task == "regression" else num_classes
        self.linear = LinearLayer(dim, out_dim, rng=rng, dtype=dtype)

    def forward(self, h: UnifiedFeature) -> Tensor:
        if h.stage != STAGE_FUSED:
            raise ValueError(f"prediction head consumes fused features, got {h.stage!r}")
        pooled = T.reduce_mean(h.data, axis=-2)
        if pooled.ndim == 1:
            pooled = T.reshape(pooled, (1, pooled.shape[0]))
        out = self.linear(pooled)
        if self.task == "regression":
            return T.reshape(out, (out.shape[0],))
        return out

    __call__ = forward


LOSS_MODES = ("mae", "mse", "cross_entropy")


def compute_loss(preds: Tensor, labels, mode: str) -> Tensor:
    """Batch-mean loss; labels are raw floats (regression) or class ids."""
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    labels = np.asarray(labels)
    n = labels.shape[0] if labels.ndim else 0
    if n == 0:
        raise ValueError("empty batch")
    if mode == "cross_entropy":
        if preds.ndim != 2:
            raise ShapeError(f"cross entropy needs logits (B, C), got {preds.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("cross entropy needs integer class labels")
        if preds.shape[0] != n:
            raise ShapeError(f"{preds.shape[0]} predictions vs {n} labels")
        logp = T.log_softmax_rows(preds)
        picked = T.gather_last(logp, labels)
        return T.mul(T.reduce_mean(picked), -1.0)
    if preds.ndim != 1:
        raise ShapeError(f"regression loss needs (B,) scores, got {preds.shape}")
    if np.issubdtype(labels.dtype, np.integer):
        labels = labels.astype(np.float64)
    if preds.shape[0] != n:
        raise ShapeError(f"{preds.shape[0]} predictions vs {n} labels")
    diff = T.sub(preds, Tensor(labels.astype(preds.dtype)))
    if mode == "mae":
        return T.reduce_mean(T.abs_(diff))
    return T.reduce_mean(T.square(diff))
