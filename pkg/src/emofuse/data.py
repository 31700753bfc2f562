"""Dataset ingestion: utterance JSON lines plus per-utterance AU and prosody
CSVs, description generation, tokenization, and batch assembly."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from emofuse import edg
from emofuse.config import TrainConfig
from emofuse.edg import AUTrack, DescriptionLexicon, ProsodySeries, TertileTable
from emofuse.encoder import Vocabulary

log = logging.getLogger("emofuse.data")

SPLITS = ("train", "valid", "test")
REQUIRED_KEYS = ("id", "text", "audio", "visual", "au_file", "prosody_file", "label")

MAX_SKIP_FRACTION = 0.10  # above this the ingest is considered broken


class DataError(Exception):
    pass


@dataclass
class Utterance:
    uid: str
    text: str
    audio: np.ndarray
    visual: np.ndarray
    track: AUTrack
    prosody: ProsodySeries
    label: float
    aed: str = ""
    ved: str = ""
    text_ids: np.ndarray | None = None
    aed_ids: np.ndarray | None = None
    ved_ids: np.ndarray | None = None


@dataclass
class Dataset:
    root: Path
    splits: dict[str, list[Utterance]]
    vocab: Vocabulary | None = None
    tertiles: TertileTable | None = None
    lexicon: DescriptionLexicon = field(default_factory=DescriptionLexicon)

    def split(self, name: str) -> list[Utterance]:
        if name not in self.splits:
            raise DataError(f"split {name!r} not loaded (have {sorted(self.splits)})")
        return self.splits[name]


def _parse_utterance(root: Path, raw: dict, where: str, au_threshold: float) -> Utterance:
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise DataError(f"{where}: missing keys {missing}")
    audio = np.asarray(raw["audio"], dtype=np.float64)
    visual = np.asarray(raw["visual"], dtype=np.float64)
    if audio.ndim != 2 or visual.ndim != 2:
        raise DataError(f"{where}: audio/visual must be 2-d time series")
    if not (np.isfinite(audio).all() and np.isfinite(visual).all()):
        raise DataError(f"{where}: non-finite raw features")
    if not np.isfinite(float(raw["label"])):
        raise DataError(f"{where}: non-finite label")
    au_path = root / raw["au_file"]
    prosody_path = root / raw["prosody_file"]
    if not au_path.exists():
        raise DataError(f"{where}: missing AU file {raw['au_file']}")
    if not prosody_path.exists():
        raise DataError(f"{where}: missing prosody file {raw['prosody_file']}")
    track = edg.read_au_csv(au_path, threshold=au_threshold)
    prosody = edg.read_prosody_csv(prosody_path)
    return Utterance(
        uid=str(raw["id"]), text=str(raw["text"]), audio=audio, visual=visual,
        track=track, prosody=prosody, label=float(raw["label"]),
    )


def load_dataset(root, splits=SPLITS, au_threshold: float = 0.5) -> Dataset:
    """Read every requested split; malformed or incomplete utterances are
    skipped with a warning, but more than 10% skipped is a hard error."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    out: dict[str, list[Utterance]] = {}
    found_any = False
    for split in splits:
        path = root / f"{split}.jsonl"
        if not path.exists():
            continue
        found_any = True
        utterances = []
        skipped = 0
        total = 0
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                total += 1
                where = f"{path.name}:{lineno}"
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as exc:
                    log.warning("%s: bad JSON (%s); skipping", where, exc)
                    skipped += 1
                    continue
                try:
                    utterances.append(_parse_utterance(root, raw, where, au_threshold))
                except (DataError, edg.EdgError) as exc:
                    log.warning("%s; skipping", exc)
                    skipped += 1
        if total == 0:
            raise DataError(f"{path}: no utterances")
        if skipped > MAX_SKIP_FRACTION * total:
            raise DataError(f"{path}: {skipped}/{total} utterances unusable")
        seen = set()
        for u in utterances:
            if u.uid in seen:
                raise DataError(f"{path}: duplicate utterance id {u.uid}")
            seen.add(u.uid)
        out[split] = utterances
    if not found_any:
        raise DataError(f"no split files found under {root}")
    return Dataset(root=root, splits=out)


def _pad_or_truncate(seq: np.ndarray, length: int) -> np.ndarray:
    if seq.shape[0] >= length:
        return seq[:length]
    pad = np.zeros((length - seq.shape[0], seq.shape[1]), dtype=seq.dtype)
    return np.concatenate([seq, pad], axis=0)


def prepare(dataset: Dataset, cfg: TrainConfig, lexicon: DescriptionLexicon | None = None) -> Dataset:
    """Fit tertiles, render descriptions, build the vocabulary, tokenize, and
    standardize raw feature lengths. Mutates and returns the dataset."""
    if lexicon is not None:
        dataset.lexicon = lexicon
    lex = dataset.lexicon

    scope = ["train"] if cfg.tertile_scope == "train" else list(dataset.splits)
    aggregates = [
        edg.aggregate_prosody(u.prosody)
        for split in scope
        if split in dataset.splits
        for u in dataset.splits[split]
    ]
    if len(aggregates) < 3:
        raise DataError(f"not enough utterances to fit tertiles ({len(aggregates)})")
    dataset.tertiles = edg.fit_tertiles(aggregates)

    for split, utterances in dataset.splits.items():
        for u in utterances:
            if u.audio.shape[1] != cfg.audio_dim:
                raise DataError(f"{u.uid}: audio width {u.audio.shape[1]} != config {cfg.audio_dim}")
            if u.visual.shape[1] != cfg.visual_dim:
                raise DataError(f"{u.uid}: visual width {u.visual.shape[1]} != config {cfg.visual_dim}")
            u.audio = _pad_or_truncate(u.audio, cfg.audio_len)
            u.visual = _pad_or_truncate(u.visual, cfg.visual_len)
            u.aed = edg.generate_aed(u.prosody, dataset.tertiles, lex)
            aus, u.ved = edg.describe_track(u.track, cfg.au_top_k, lex)

    vocab_file = dataset.root / "vocab.txt"
    if vocab_file.exists():
        dataset.vocab = Vocabulary.from_file(vocab_file)
    else:
        texts = [u.text for u in dataset.splits.get("train", [])]
        texts += [u.aed for u in dataset.splits.get("train", [])]
        texts += [u.ved for u in dataset.splits.get("train", [])]
        dataset.vocab = Vocabulary.build(texts, cfg.vocab_size)
    if len(dataset.vocab) > cfg.vocab_size:
        raise DataError(f"vocabulary size {len(dataset.vocab)} exceeds config {cfg.vocab_size}")

    for utterances in dataset.splits.values():
        for u in utterances:
            u.text_ids = dataset.vocab.encode(u.text, cfg.max_text_len)
            u.aed_ids = dataset.vocab.encode(u.aed, cfg.max_desc_len)
            u.ved_ids = dataset.vocab.encode(u.ved, cfg.max_desc_len)
    return dataset


@dataclass
class Batch:
    uids: list[str]
    text_ids: np.ndarray
    aed_ids: np.ndarray
    ved_ids: np.ndarray
    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.uids)


def collate(utterances: list[Utterance], dtype=np.float32) -> Batch:
    if not utterances:
        raise DataError("cannot collate an empty batch")
    return Batch(
        uids=[u.uid for u in utterances],
        text_ids=np.stack([u.text_ids for u in utterances]),
        aed_ids=np.stack([u.aed_ids for u in utterances]),
        ved_ids=np.stack([u.ved_ids for u in utterances]),
        audio=np.stack([u.audio for u in utterances]).astype(dtype),
        visual=np.stack([u.visual for u in utterances]).astype(dtype),
        labels=np.array([u.label for u in utterances], dtype=np.float64),
    )


def iter_batches(utterances: list[Utterance], batch_size: int, rng: np.random.Generator | None = None, dtype=np.float32):
    """Chunked batches in corpus order, or shuffled when an rng is given."""
    order = np.arange(len(utterances))
    if rng is not None:
        order = rng.permutation(len(utterances))
    for start in range(0, len(utterances), batch_size):
        chunk = [utterances[i] for i in order[start : start + batch_size]]
        yield collate(chunk, dtype=dtype)
