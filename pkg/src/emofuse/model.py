"""Full model assembly: unimodal coding, description encoding, feature
enhancement, progressive fusion, and the prediction head, wired per config
and per ablation variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emofuse import tensor as T
from emofuse.blocks import (
    LinearLayer,
    Module,
    MultiHeadAttention,
    RngSource,
    TransformerEncoderLayer,
)
from emofuse.config import ConfigError, TrainConfig
from emofuse.data import Batch
from emofuse.encoder import (
    STAGE_CORE,
    STAGE_DESCRIPTION,
    STAGE_FUSED,
    STAGE_MINOR,
    UnifiedFeature,
    feature_enhance,
    tokenize_embed,
    unify,
)
from emofuse.tensor import Parameter, Tensor
from emofuse.tpf import PredictionHead, TPFStack, ultimate_fusion


@dataclass
class ModelVariant:
    """Structural ablations; description/raw-input toggles live in the config."""

    no_ceu: bool = False
    no_mfu: bool = False
    no_fusion_layer: bool = False

    def key(self) -> str:
        parts = [name for name in ("no_ceu", "no_mfu", "no_fusion_layer") if getattr(self, name)]
        return "+".join(parts) if parts else "base"


class SentimentModel(Module):
    def __init__(self, cfg: TrainConfig, variant: ModelVariant | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.variant = variant or ModelVariant()
        if not cfg.use_raw_av and not (cfg.use_aed and cfg.use_ved):
            raise ConfigError("dropping raw audio/visual requires both descriptions enabled")

        d = cfg.dim
        t_len = cfg.feature_len
        dtype = np.float64 if cfg.precision == "double" else np.float32
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.rng_src = RngSource(np.random.default_rng(cfg.seed + 1))
        drop = cfg.dropout

        self.embedding = Parameter(rng.normal(0, 0.02, size=(cfg.vocab_size, d)).astype(dtype))
        self.bank_t = Parameter(rng.normal(0, 0.02, size=(t_len, d)).astype(dtype))
        self.bank_a = Parameter(rng.normal(0, 0.02, size=(t_len, d)).astype(dtype))
        self.bank_v = Parameter(rng.normal(0, 0.02, size=(t_len, d)).astype(dtype))
        self.unify_t = TransformerEncoderLayer(d, cfg.heads, cfg.ffn_factor, drop, rng=rng, rng_src=self.rng_src, dtype=dtype)
        if cfg.use_raw_av:
            self.proj_a = LinearLayer(cfg.audio_dim, d, rng=rng, dtype=dtype)
            self.unify_a = TransformerEncoderLayer(d, cfg.heads, cfg.ffn_factor, drop, rng=rng, rng_src=self.rng_src, dtype=dtype)
            self.proj_v = LinearLayer(cfg.visual_dim, d, rng=rng, dtype=dtype)
            self.unify_v = TransformerEncoderLayer(d, cfg.heads, cfg.ffn_factor, drop, rng=rng, rng_src=self.rng_src, dtype=dtype)

        self.n_text_parts = 1 + int(cfg.use_aed) + int(cfg.use_ved)
        self.n_audio_parts = int(cfg.use_raw_av) + int(cfg.use_aed)
        self.n_visual_parts = int(cfg.use_raw_av) + int(cfg.use_ved)
        if self.n_audio_parts == 0 or self.n_visual_parts == 0:
            raise ConfigError("audio/visual paths need raw features or a description")
        self.enhance_t = LinearLayer(self.n_text_parts * d, d, rng=rng, dtype=dtype)
        self.enhance_a = LinearLayer(self.n_audio_parts * d, d, rng=rng, dtype=dtype)
        self.enhance_v = LinearLayer(self.n_visual_parts * d, d, rng=rng, dtype=dtype)

        if self.variant.no_mfu:
            # plain encoder stack on text; minor path is raw addition
            self.text_stack = [
                TransformerEncoderLayer(d, cfg.heads, cfg.ffn_factor, drop, rng=rng, rng_src=self.rng_src, dtype=dtype)
                for _ in range(cfg.ceu_layers)
            ]
        else:
            self.tpf = TPFStack(
                d, t_len, cfg.heads, cfg.ceu_layers, cfg.mfu_layers,
                ffn_factor=cfg.ffn_factor, dropout_rate=drop, rng=rng, rng_src=self.rng_src, dtype=dtype,
            )

        if self.variant.no_fusion_layer:
            self.fusion_linear = LinearLayer(2 * d, d, rng=rng, dtype=dtype)
        else:
            self.fusion_attn = MultiHeadAttention(d, cfg.heads, drop, rng=rng, rng_src=self.rng_src, dtype=dtype)

        task = "classification" if cfg.loss_mode == "cross_entropy" else "regression"
        lo, hi = cfg.label_range
        self.num_classes = int(round(hi - lo)) + 1
        self.head = PredictionHead(d, task=task, num_classes=self.num_classes, rng=rng, dtype=dtype)

    # ------------------------------------------------------------------
    def encode_inputs(self, batch: Batch) -> tuple[UnifiedFeature, UnifiedFeature, UnifiedFeature]:
        cfg = self.cfg
        text_emb = tokenize_embed(batch.text_ids, self.embedding)
        x_t = unify(text_emb, self.bank_t, self.unify_t, "text")
        parts_t = [x_t]
        d_a = d_v = None
        if cfg.use_aed:
            aed_emb = tokenize_embed(batch.aed_ids, self.embedding)
            d_a = unify(aed_emb, self.bank_a, self.unify_t, "audio", stage=STAGE_DESCRIPTION)
            parts_t.append(d_a)
        if cfg.use_ved:
            ved_emb = tokenize_embed(batch.ved_ids, self.embedding)
            d_v = unify(ved_emb, self.bank_v, self.unify_t, "visual", stage=STAGE_DESCRIPTION)
            parts_t.append(d_v)

        parts_a = []
        parts_v = []
        if cfg.use_raw_av:
            audio = Tensor(batch.audio.astype(self.dtype))
            visual = Tensor(batch.visual.astype(self.dtype))
            parts_a.append(unify(self.proj_a(audio), self.bank_a, self.unify_a, "audio"))
            parts_v.append(unify(self.proj_v(visual), self.bank_v, self.unify_v, "visual"))
        if d_a is not None:
            parts_a.append(d_a)
        if d_v is not None:
            parts_v.append(d_v)

        h0_t = feature_enhance("text", parts_t, self.enhance_t, expected_parts=self.n_text_parts)
        h0_a = feature_enhance("audio", parts_a, self.enhance_a, expected_parts=self.n_audio_parts)
        h0_v = feature_enhance("visual", parts_v, self.enhance_v, expected_parts=self.n_visual_parts)
        return h0_t, h0_a, h0_v

    def fuse(self, h0_t: UnifiedFeature, h0_a: UnifiedFeature, h0_v: UnifiedFeature):
        if self.variant.no_mfu:
            h_t = h0_t.with_stage(STAGE_CORE)
            for layer in self.text_stack:
                h_t = UnifiedFeature(layer(h_t.data), "text", STAGE_CORE)
            h_m = UnifiedFeature(T.add(h0_a.data, h0_v.data), "minor", STAGE_MINOR)
            return h_t, h_m
        if self.variant.no_ceu:
            # encode text once with the full stack, then run the fusion chain
            # against that single deepest feature
            h_t = h0_t.with_stage(STAGE_CORE)
            for j in range(1, self.tpf.depth_j + 1):
                h_t = self.tpf.ceu_forward(h_t, j)
            h_m_data = self.tpf.h0_m
            for k in range(1, self.tpf.depth_k + 1):
                h_m_data = self.tpf.mfu_forward(h_t, h0_a, h0_v, h_m_data, k)
            return h_t, UnifiedFeature(h_m_data, "minor", STAGE_MINOR)
        return self.tpf(h0_t, h0_a, h0_v)

    def forward(self, batch: Batch) -> Tensor:
        h0_t, h0_a, h0_v = self.encode_inputs(batch)
        h_t, h_m = self.fuse(h0_t, h0_a, h0_v)
        if self.variant.no_fusion_layer:
            cat = T.concat_last([h_t.data, h_m.data])
            fused = UnifiedFeature(self.fusion_linear(cat), "fused", STAGE_FUSED)
        else:
            fused = ultimate_fusion(self.fusion_attn, h_t, h_m)
        return self.head(fused)

    __call__ = forward

    # ------------------------------------------------------------------
    def labels_for_loss(self, labels: np.ndarray) -> np.ndarray:
        """Regression keeps raw scores; classification maps to class ids."""
        if self.cfg.loss_mode != "cross_entropy":
            return labels
        lo, _ = self.cfg.label_range
        return (np.round(np.clip(labels, *self.cfg.label_range)) - lo).astype(np.int64)

    def scores_from_preds(self, preds: Tensor) -> np.ndarray:
        """Scalar sentiment scores for metric computation."""
        if self.cfg.loss_mode != "cross_entropy":
            return np.asarray(preds.data, dtype=np.float64)
        lo, _ = self.cfg.label_range
        return preds.data.argmax(axis=-1).astype(np.float64) + lo

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}
