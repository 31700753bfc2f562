"""Unimodal coding into the shared T x d space, description encoding, and
feature enhancement.

Every modality (and every description sentence) ends up as a fixed T x d
feature: the raw sequence is projected to width d, a per-modality bank of T
learnable rows is appended, one encoder layer runs over the joint sequence,
and the first T output rows are kept. Enhancement then concatenates raw and
description features and mixes them through a fully connected layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from emofuse import tensor as T
from emofuse.blocks import LinearLayer, Module, TransformerEncoderLayer
from emofuse.tensor import Parameter, ShapeError, Tensor

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9']+")

STAGE_UNIMODAL = "x"
STAGE_DESCRIPTION = "d"
STAGE_ENHANCED = "h0"
STAGE_CORE = "core"
STAGE_MINOR = "minor"
STAGE_FUSED = "fused"

_STAGES = (STAGE_UNIMODAL, STAGE_DESCRIPTION, STAGE_ENHANCED, STAGE_CORE, STAGE_MINOR, STAGE_FUSED)

# expected enhancement inputs per modality: text mixes in both descriptions
ENHANCE_PARTS = {"text": 3, "audio": 2, "visual": 2}


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense token -> id map with reserved padding and unknown ids."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            tokens = [PAD_TOKEN, UNK_TOKEN] + [t for t in tokens if t not in (PAD_TOKEN, UNK_TOKEN)]
        self._ids = {tok: i for i, tok in enumerate(tokens)}
        self._tokens = tokens
        if len(self._ids) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, text: str, max_len: int) -> np.ndarray:
        """Token ids, truncated/padded to max_len; empty text becomes one unknown."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        ids = [self.id_of(t) for t in tokenize(text)]
        if not ids:
            ids = [UNK_ID]
        ids = ids[:max_len]
        ids += [PAD_ID] * (max_len - len(ids))
        return np.array(ids, dtype=np.int64)

    @classmethod
    def build(cls, texts, max_size: int) -> "Vocabulary":
        """Frequency-ranked vocabulary; ties break lexicographically."""
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        return cls([PAD_TOKEN, UNK_TOKEN] + ranked[: max(0, max_size - 2)])

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path) as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")


_POS_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    key = (length, dim, np.dtype(dtype).name)
    if key not in _POS_CACHE:
        pos = np.arange(length, dtype=np.float64)[:, None]
        idx = np.arange(dim, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
        pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
        _POS_CACHE[key] = pe.astype(dtype)
    return _POS_CACHE[key]


def tokenize_embed(ids: np.ndarray, embedding: Parameter) -> Tensor:
    """Embed id sequences and add sinusoidal positions (the only place
    positional information enters the model)."""
    emb = T.embedding_lookup(embedding, ids)
    length = ids.shape[-1]
    pos = sinusoidal_positions(length, embedding.shape[-1], embedding.dtype)
    return T.add(emb, Tensor(pos))


def embed_text(text: str, vocab: Vocabulary, embedding: Parameter, max_len: int) -> Tensor:
    return tokenize_embed(vocab.encode(text, max_len), embedding)


@dataclass
class UnifiedFeature:
    """T x d feature (optionally batch-leading) with modality and stage tags."""

    data: Tensor
    modality: str
    stage: str

    def __post_init__(self):
        if self.stage not in _STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.data.ndim not in (2, 3):
            raise ShapeError(f"unified feature must be T x d or B x T x d, got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    def with_stage(self, stage: str) -> "UnifiedFeature":
        return UnifiedFeature(self.data, self.modality, stage)


def project(raw: Tensor, proj: LinearLayer) -> Tensor:
    """Per-frame affine map from native width d_m to the shared width d."""
    if raw.shape[-1] != proj.in_dim:
        raise ShapeError(f"projection expects width {proj.in_dim}, got {raw.shape}")
    return proj(raw)


def unify(seq: Tensor, bank: Parameter, layer: TransformerEncoderLayer, modality: str,
          stage: str = STAGE_UNIMODAL) -> UnifiedFeature:
    """Append the T learnable bank rows, encode the joint sequence, and keep
    the first T output rows."""
    t_len, dim = bank.shape
    if seq.shape[-1] != dim:
        raise ShapeError(f"unify width mismatch: seq {seq.shape} vs bank {bank.shape}")
    if seq.ndim == 3:
        rows = T.broadcast_to(bank, (seq.shape[0], t_len, dim))
    else:
        rows = bank
    joint = T.concat([seq, rows], axis=-2)
    encoded = layer(joint)
    out = T.slice_axis(encoded, -2, 0, t_len)
    return UnifiedFeature(out, modality, stage)


def encode_description(ids: np.ndarray, embedding: Parameter, bank: Parameter,
                       layer: TransformerEncoderLayer, modality: str) -> UnifiedFeature:
    """Descriptions ride the text pipeline (same embedding, same encoder layer)
    but carry their own modality's bank rows."""
    emb = tokenize_embed(ids, embedding)
    return unify(emb, bank, layer, modality, stage=STAGE_DESCRIPTION)


def feature_enhance(modality: str, parts: list[UnifiedFeature], fc: LinearLayer,
                    expected_parts: int | None = None) -> UnifiedFeature:
    """Concatenate feature widths and mix through a fully connected layer.

    The base model feeds [X_t; D_a; D_v] for text and [X_m; D_m] for the
    minor modalities; ablation variants pass expected_parts explicitly.
    """
    expect = expected_parts if expected_parts is not None else ENHANCE_PARTS[modality]
    if len(parts) != expect:
        raise ShapeError(f"{modality} enhancement expects {expect} parts, got {len(parts)}")
    cat = T.concat_last([p.data for p in parts])
    out = fc(cat)
    return UnifiedFeature(out, modality, STAGE_ENHANCED)
