"""Seeded synthetic dataset generator.

Every sample is driven by a scalar sentiment label: the text carries
intensity-matched sentiment words, a few audio/visual feature channels shift
their mean with the label, positive labels lengthen smile-type AU runs while
negative labels lengthen frown-type runs, and prosody means shift with the
label while jitter/shimmer spread grows with its magnitude. The label is
recoverable from the emission parameters by construction; a least-squares
probe over them is run at generation time as a self-test.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from emofuse import edg
from emofuse.edg import AU_IDS, DescriptionLexicon, ProsodySeries

POSITIVE_AUS = ("AU06", "AU12")
NEGATIVE_AUS = ("AU01", "AU04", "AU15")

WORD_BANKS = {
    3: ["fantastic", "superb", "magnificent", "phenomenal"],
    2: ["wonderful", "excellent", "amazing", "delightful"],
    1: ["good", "nice", "pleasant", "enjoyable"],
    0: ["okay", "plain", "ordinary", "unremarkable"],
    -1: ["bad", "dull", "weak", "mediocre"],
    -2: ["awful", "terrible", "poor", "dreary"],
    -3: ["horrendous", "atrocious", "abysmal", "unbearable"],
}

FILLER_WORDS = [
    "the", "movie", "was", "film", "story", "i", "it", "this", "that",
    "plot", "scene", "acting", "felt", "seemed", "really", "quite",
    "overall", "honestly", "watched", "yesterday",
]


@dataclass
class SyntheticSpec:
    n_train: int = 2000
    n_valid: int = 250
    n_test: int = 500
    label_range: tuple[float, float] = (-3.0, 3.0)
    zero_rate: float = 0.04  # fraction of exactly-zero labels
    seed: int = 1
    # text emission
    text_len: int = 10
    # raw feature emission
    audio_len: int = 30
    audio_dim: int = 12
    visual_len: int = 30
    visual_dim: int = 12
    signal_channels: int = 3  # leading channels whose mean tracks the label
    audio_signal: float = 0.6
    visual_signal: float = 0.6
    audio_noise: float = 0.5
    visual_noise: float = 0.5
    # AU emission
    au_frames: int = 60
    au_run_scale: float = 4.0  # qualifying run length grows 3 + scale * |y|
    au_flicker_rate: float = 0.08
    # prosody emission
    prosody_frames: int = 50
    pitch_base: float = 120.0
    pitch_shift: float = 12.0
    pitch_noise: float = 5.0
    loudness_base: float = 60.0
    loudness_shift: float = 6.0
    loudness_noise: float = 2.5
    jitter_base: float = 0.02
    jitter_spread: float = 1.5  # spread multiplier per unit |y|
    shimmer_base: float = 0.06
    shimmer_spread: float = 1.5

    def max_au_run(self) -> int:
        hi = max(abs(self.label_range[0]), abs(self.label_range[1]))
        return min(self.au_frames, 3 + int(round(self.au_run_scale * hi)))


@dataclass
class SyntheticUtterance:
    uid: str
    label: float
    text: str
    audio: np.ndarray
    visual: np.ndarray
    au_intensity: np.ndarray
    prosody: ProsodySeries
    emission: np.ndarray  # latent emission parameters, for the probe


def _sample_label(rng, spec) -> float:
    if rng.random() < spec.zero_rate:
        return 0.0
    lo, hi = spec.label_range
    return float(np.round(rng.uniform(lo, hi), 4))


def _sample_text(rng, y: float, spec) -> tuple[str, float]:
    bucket = int(np.clip(np.round(y), -3, 3))
    words = list(rng.choice(FILLER_WORDS, size=spec.text_len, replace=True))
    n_sent = 1 if abs(y) < 1.5 else 2
    for _ in range(n_sent):
        bank = WORD_BANKS[bucket]
        word = bank[int(rng.integers(len(bank)))]
        pos = int(rng.integers(len(words) + 1))
        words.insert(pos, word)
    return " ".join(words), float(bucket * n_sent)


def _sample_features(rng, y, length, dim, signal, noise, n_signal):
    feats = rng.normal(0.0, noise, size=(length, dim))
    feats[:, :n_signal] += y * signal
    return feats.astype(np.float64)


def _sample_au(rng, y: float, spec) -> tuple[np.ndarray, float]:
    frames = spec.au_frames
    intensity = rng.uniform(0.0, 0.4, size=(frames, len(AU_IDS)))
    signal_aus = POSITIVE_AUS if y > 0 else NEGATIVE_AUS if y < 0 else ()
    run_len = 0
    if signal_aus:
        run_len = min(frames, 3 + int(round(spec.au_run_scale * abs(y))))
        for idx, au in enumerate(signal_aus):
            col = AU_IDS.index(au)
            this_len = run_len if idx == 0 else max(3, int(round(run_len * 0.75)))
            start = int(rng.integers(0, max(1, frames - this_len + 1)))
            intensity[start : start + this_len, col] = rng.uniform(1.5, 3.5, size=this_len) + 0.3 * abs(y)
    # sub-threshold flicker on non-signal AUs, never 3 consecutive frames
    for col, au in enumerate(AU_IDS):
        if au in signal_aus:
            continue
        for f in range(frames):
            if rng.random() < spec.au_flicker_rate and (f < 2 or not (intensity[f - 1, col] > 0.5 and intensity[f - 2, col] > 0.5)):
                intensity[f, col] = rng.uniform(0.8, 2.0)
    signed_run = run_len if y > 0 else -run_len if y < 0 else 0
    return np.round(intensity, 4), float(signed_run)


def _sample_prosody(rng, y: float, spec) -> ProsodySeries:
    f = spec.prosody_frames
    pitch = spec.pitch_base + spec.pitch_shift * y + rng.normal(0, spec.pitch_noise, f)
    loud = spec.loudness_base + spec.loudness_shift * y + rng.normal(0, spec.loudness_noise, f)
    jitter = np.abs(rng.normal(spec.jitter_base, spec.jitter_base * (1 + spec.jitter_spread * abs(y)), f))
    shimmer = np.abs(rng.normal(spec.shimmer_base, spec.shimmer_base * (1 + spec.shimmer_spread * abs(y)), f))
    return ProsodySeries(pitch=pitch, loudness=loud, jitter=jitter, shimmer=shimmer)


def make_utterance(spec: SyntheticSpec, split: str, index: int) -> SyntheticUtterance:
    """Deterministic per utterance, so generation can be parallelized."""
    split_id = {"train": 0, "valid": 1, "test": 2}[split]
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, split_id, index)))
    y = _sample_label(rng, spec)
    text, word_signal = _sample_text(rng, y, spec)
    audio = _sample_features(rng, y, spec.audio_len, spec.audio_dim, spec.audio_signal, spec.audio_noise, spec.signal_channels)
    visual = _sample_features(rng, y, spec.visual_len, spec.visual_dim, spec.visual_signal, spec.visual_noise, spec.signal_channels)
    au, signed_run = _sample_au(rng, y, spec)
    prosody = _sample_prosody(rng, y, spec)
    emission = np.array([
        word_signal,
        signed_run,
        spec.pitch_shift * y,
        spec.audio_signal * y,
        1.0,
    ])
    return SyntheticUtterance(f"{split}-{index:05d}", y, text, audio, visual, au, prosody, emission)


def probe_accuracy(utterances: list[SyntheticUtterance]) -> float:
    """Least-squares fit of label on emission parameters; binary accuracy on
    the non-zero-label subset."""
    X = np.stack([u.emission for u in utterances])
    y = np.array([u.label for u in utterances])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    preds = X @ coef
    nz = y != 0
    if not nz.any():
        return 0.0
    return float(((preds[nz] > 0) == (y[nz] > 0)).mean())


def full_vocabulary() -> list[str]:
    """Every token the generator or description templates can emit."""
    from emofuse.encoder import tokenize

    lex = DescriptionLexicon()
    seen: dict[str, None] = {}
    for bank in WORD_BANKS.values():
        for w in bank:
            seen.setdefault(w)
    for w in FILLER_WORDS:
        seen.setdefault(w)
    texts = [lex.aed_template, lex.ved_template, lex.neutral_ved]
    texts += [f"{lvl} {feat}" for feat in edg.PROSODY_FEATURES for lvl in edg.LEVELS]
    texts += list(lex.au_phrases.values())
    for t in texts:
        for tok in tokenize(t):
            seen.setdefault(tok)
    return list(seen)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write the dataset tree and return a summary (incl. probe accuracy).

    Layout: {train,valid,test}.jsonl, au/<id>.csv, prosody/<id>.csv,
    vocab.txt, tertiles.json (fitted on the train split), summary.json.
    """
    total = spec.n_train + spec.n_valid + spec.n_test
    if total <= 0 or min(spec.n_train, spec.n_valid, spec.n_test) < 0:
        raise ValueError(f"degenerate sample counts: {spec.n_train}/{spec.n_valid}/{spec.n_test}")
    out = Path(out_dir)
    (out / "au").mkdir(parents=True, exist_ok=True)
    (out / "prosody").mkdir(parents=True, exist_ok=True)

    counts = {"train": spec.n_train, "valid": spec.n_valid, "test": spec.n_test}
    train_utts: list[SyntheticUtterance] = []
    train_aggregates = []
    for split, n in counts.items():
        with open(out / f"{split}.jsonl", "w") as fh:
            for i in range(n):
                u = make_utterance(spec, split, i)
                edg.write_au_csv(out / "au" / f"{u.uid}.csv", u.au_intensity)
                edg.write_prosody_csv(out / "prosody" / f"{u.uid}.csv", u.prosody)
                record = {
                    "id": u.uid,
                    "text": u.text,
                    "audio": np.round(u.audio, 4).tolist(),
                    "visual": np.round(u.visual, 4).tolist(),
                    "au_file": f"au/{u.uid}.csv",
                    "prosody_file": f"prosody/{u.uid}.csv",
                    "label": u.label,
                }
                fh.write(json.dumps(record) + "\n")
                if split == "train":
                    train_utts.append(u)
                    train_aggregates.append(edg.aggregate_prosody(u.prosody))

    from emofuse.encoder import Vocabulary

    Vocabulary(["<pad>", "<unk>"] + full_vocabulary()).to_file(out / "vocab.txt")

    tertiles = edg.fit_tertiles(train_aggregates) if len(train_aggregates) >= 3 else None
    if tertiles is not None:
        (out / "tertiles.json").write_text(tertiles.to_json())

    summary = {
        "spec": {**asdict(spec), "label_range": list(spec.label_range)},
        "counts": counts,
        "probe_acc2": probe_accuracy(train_utts) if train_utts else None,
        "max_au_run": spec.max_au_run(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
