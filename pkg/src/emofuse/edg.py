"""Rule-based textualization of prosody and facial action units.

Per-utterance prosodic aggregates are binned against corpus tertiles into
low/normal/high levels and rendered through a fixed audio template; action
unit tracks are scanned for sustained activations whose top-k entries are
rendered through an expression template. All operations here are pure.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

PROSODY_FEATURES = ("pitch", "loudness", "jitter", "shimmer")
LEVELS = ("low", "normal", "high")

# the 16 supported action units and their phrase forms
AU_PHRASES = {
    "AU01": "raise inner brow",
    "AU02": "raise outer brow",
    "AU04": "lower brow",
    "AU05": "raise upper lid",
    "AU06": "raise cheek",
    "AU07": "tighten lid",
    "AU09": "wrinkle nose",
    "AU10": "raise upper lip",
    "AU12": "pull lip corner",
    "AU15": "depress lip corner",
    "AU20": "stretch lip",
    "AU23": "tighten lip",
    "AU25": "part lip",
    "AU26": "drop jaw",
    "AU28": "suck lip",
    "AU45": "blink",
}
AU_IDS = tuple(AU_PHRASES)

DEFAULT_AED_TEMPLATE = "The Speaker made such an tone: {pitch}, {loudness}, {jitter}, and {shimmer}."
DEFAULT_VED_TEMPLATE = "The speaker made such an expression: {phrases}."
NEUTRAL_VED = "The speaker made a neutral expression."

MIN_RUN_FRAMES = 3  # consecutive active frames needed to qualify an AU
DEFAULT_AU_THRESHOLD = 0.5  # graded intensities above this count as active


class EdgError(ValueError):
    pass


@dataclass
class ProsodySeries:
    """Per-frame pitch (Hz), loudness (energy), jitter and shimmer (ratios)."""

    pitch: np.ndarray
    loudness: np.ndarray
    jitter: np.ndarray
    shimmer: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in PROSODY_FEATURES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size < 1:
                raise EdgError(f"{name} must be a non-empty 1-d series")
            arrays[name] = arr
            setattr(self, name, arr)
        lengths = {a.size for a in arrays.values()}
        if len(lengths) != 1:
            raise EdgError(f"prosody series lengths differ: { {k: v.size for k, v in arrays.items()} }")
        for name, arr in arrays.items():
            if not np.isfinite(arr).all():
                raise EdgError(f"{name} contains non-finite values")
        if (arrays["jitter"] < 0).any() or (arrays["shimmer"] < 0).any():
            raise EdgError("jitter/shimmer must be non-negative")

    def __len__(self):
        return self.pitch.size


def aggregate_prosody(series: ProsodySeries) -> dict[str, float]:
    """Reduce a frame series to one scalar per feature (arithmetic mean)."""
    return {name: float(getattr(series, name).mean()) for name in PROSODY_FEATURES}


@dataclass
class TertileTable:
    """Per-feature (t1, t2) boundaries splitting a corpus into three bins."""

    bounds: dict[str, tuple[float, float]]

    def __post_init__(self):
        for name in PROSODY_FEATURES:
            if name not in self.bounds:
                raise EdgError(f"tertile table missing feature {name}")
            t1, t2 = self.bounds[name]
            if not (t1 <= t2):
                raise EdgError(f"{name} tertiles out of order: {t1} > {t2}")

    def to_json(self) -> str:
        return json.dumps({k: list(v) for k, v in self.bounds.items()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TertileTable":
        raw = json.loads(text)
        return cls({k: (float(v[0]), float(v[1])) for k, v in raw.items()})


def fit_tertiles(aggregates: list[dict[str, float]]) -> TertileTable:
    """Fit 1/3 and 2/3 empirical quantiles per feature over utterance aggregates.

    Quantiles interpolate linearly between order statistics, so n distinct
    values land floor(n/3) to ceil(n/3) per bin.
    """
    if len(aggregates) < 3:
        raise EdgError(f"need at least 3 utterances to fit tertiles, got {len(aggregates)}")
    bounds = {}
    for name in PROSODY_FEATURES:
        values = np.array([a[name] for a in aggregates], dtype=np.float64)
        t1, t2 = np.quantile(values, [1.0 / 3.0, 2.0 / 3.0])
        bounds[name] = (float(t1), float(t2))
    return TertileTable(bounds)


def bin_level(value: float, feature: str, table: TertileTable) -> str:
    """Map a value to low/normal/high; boundary values bin to normal."""
    if feature not in table.bounds:
        raise EdgError(f"unknown prosodic feature {feature!r}")
    if math.isnan(value):
        raise EdgError(f"cannot bin NaN {feature}")
    t1, t2 = table.bounds[feature]
    if value < t1:
        return "low"
    if value > t2:
        return "high"
    return "normal"


@dataclass
class DescriptionLexicon:
    """Phrase tables and templates for rendering descriptions."""

    au_phrases: dict[str, str] = field(default_factory=lambda: dict(AU_PHRASES))
    prosody_phrases: dict[tuple[str, str], str] = field(
        default_factory=lambda: {
            (f, lvl): f"{lvl} {f}" for f in PROSODY_FEATURES for lvl in LEVELS
        }
    )
    aed_template: str = DEFAULT_AED_TEMPLATE
    ved_template: str = DEFAULT_VED_TEMPLATE
    neutral_ved: str = NEUTRAL_VED

    def __post_init__(self):
        missing = [au for au in AU_IDS if au not in self.au_phrases]
        if missing:
            raise EdgError(f"lexicon missing AU phrases: {missing}")
        for f in PROSODY_FEATURES:
            for lvl in LEVELS:
                if (f, lvl) not in self.prosody_phrases:
                    raise EdgError(f"lexicon missing prosody phrase for {lvl} {f}")
        if "{phrases}" not in self.ved_template:
            raise EdgError("ved template needs a {phrases} slot")

    @classmethod
    def from_file(cls, path) -> "DescriptionLexicon":
        """Load overrides from a JSON file; unspecified entries keep defaults."""
        with open(path) as fh:
            raw = json.load(fh)
        lex = cls()
        for au, phrase in raw.get("au_phrases", {}).items():
            lex.au_phrases[au] = phrase
        for key, phrase in raw.get("prosody_phrases", {}).items():
            feature, level = key.split("/")
            lex.prosody_phrases[(feature, level)] = phrase
        for attr in ("aed_template", "ved_template", "neutral_ved"):
            if attr in raw:
                setattr(lex, attr, raw[attr])
        lex.__post_init__()
        return lex


def generate_aed(series: ProsodySeries, table: TertileTable, lex: DescriptionLexicon | None = None) -> str:
    """Render the audio description; feature order is fixed."""
    lex = lex if lex is not None else DescriptionLexicon()
    agg = aggregate_prosody(series)
    slots = {
        name: lex.prosody_phrases[(name, bin_level(agg[name], name, table))]
        for name in PROSODY_FEATURES
    }
    return lex.aed_template.format(**slots)


@dataclass
class AUTrack:
    """Frame-by-AU activation matrix over the 16 supported AUs."""

    active: np.ndarray  # frames x 16 bool
    frame_rate: float = 30.0

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        if self.active.ndim != 2 or self.active.shape[1] != len(AU_IDS):
            raise EdgError(f"AU track must be frames x {len(AU_IDS)}, got {self.active.shape}")
        if self.active.shape[0] < 1:
            raise EdgError("AU track needs at least one frame")

    @classmethod
    def from_intensity(cls, matrix, threshold: float = DEFAULT_AU_THRESHOLD, frame_rate: float = 30.0) -> "AUTrack":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix > threshold, frame_rate)


@dataclass
class AUCandidate:
    au_id: str
    duration: int  # total active frames across the whole track
    first_onset: int  # start frame of the earliest qualifying run

    def __post_init__(self):
        if self.duration < MIN_RUN_FRAMES:
            raise EdgError(f"{self.au_id} candidate duration {self.duration} below qualification")


def detect_candidates(track: AUTrack) -> list[AUCandidate]:
    """AUs with at least one run of >= 3 consecutive active frames.

    Duration counts every active frame of the AU, not just the longest run,
    so flickery activations still rank by overall activity.
    """
    out = []
    frames = track.active.shape[0]
    for col, au_id in enumerate(AU_IDS):
        col_active = track.active[:, col]
        total = int(col_active.sum())
        if total < MIN_RUN_FRAMES:
            continue
        # run-length scan for the earliest qualifying run
        first_onset = None
        run_start = None
        for i in range(frames + 1):
            on = i < frames and col_active[i]
            if on and run_start is None:
                run_start = i
            elif not on and run_start is not None:
                if i - run_start >= MIN_RUN_FRAMES:
                    first_onset = run_start
                    break
                run_start = None
        if first_onset is None:
            continue
        out.append(AUCandidate(au_id, total, first_onset))
    return out


def select_top_k(candidates: list[AUCandidate], k: int) -> list[str]:
    """Longest-duration AUs first; ties break toward the lower AU id."""
    if k < 1:
        raise EdgError(f"k must be >= 1, got {k}")
    ranked = sorted(candidates, key=lambda c: (-c.duration, c.au_id))
    return [c.au_id for c in ranked[:k]]


def generate_ved(aus: list[str], lex: DescriptionLexicon | None = None, template: str | None = None) -> str:
    """Render the expression description for an ordered AU selection."""
    lex = lex if lex is not None else DescriptionLexicon()
    if not aus:
        return lex.neutral_ved
    phrases = []
    for au in aus:
        if au not in lex.au_phrases:
            raise EdgError(f"AU {au!r} not in lexicon")
        phrases.append(lex.au_phrases[au])
    tmpl = template if template is not None else lex.ved_template
    if "{phrases}" not in tmpl:
        raise EdgError("ved template needs a {phrases} slot")
    return tmpl.format(phrases=", ".join(phrases))


def describe_track(track: AUTrack, k: int, lex: DescriptionLexicon | None = None, template: str | None = None):
    """Full AU pipeline: candidates, top-k selection, rendered sentence."""
    aus = select_top_k(detect_candidates(track), k)
    return aus, generate_ved(aus, lex, template)


# ---------------------------------------------------------------------------
# file formats


def read_au_csv(path, threshold: float = DEFAULT_AU_THRESHOLD) -> AUTrack:
    """CSV with header frame,AU01,...,AU45; values graded [0,5] or binary."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EdgError(f"{path}: empty AU file")
        expected = ["frame", *AU_IDS]
        if [h.strip() for h in header] != expected:
            raise EdgError(f"{path}: AU header must be {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise EdgError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise EdgError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise EdgError(f"{path}: no frames")
    return AUTrack.from_intensity(np.array(rows), threshold)


def write_au_csv(path, intensities: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", *AU_IDS])
        for i, row in enumerate(np.asarray(intensities)):
            writer.writerow([i] + [f"{v:.4f}" for v in row])


def read_prosody_csv(path) -> ProsodySeries:
    """CSV with header frame,pitch,loudness,jitter,shimmer."""
    expected = ["frame", *PROSODY_FEATURES]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EdgError(f"{path}: empty prosody file")
        if [h.strip() for h in header] != expected:
            raise EdgError(f"{path}: prosody header must be {','.join(expected)}")
        cols = {name: [] for name in PROSODY_FEATURES}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise EdgError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                for name, v in zip(PROSODY_FEATURES, row[1:]):
                    cols[name].append(float(v))
            except ValueError as exc:
                raise EdgError(f"{path}:{lineno}: {exc}") from exc
    if not cols["pitch"]:
        raise EdgError(f"{path}: no frames")
    return ProsodySeries(**cols)


def write_prosody_csv(path, series: ProsodySeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", *PROSODY_FEATURES])
        for i in range(len(series)):
            writer.writerow(
                [i] + [f"{getattr(series, name)[i]:.6f}" for name in PROSODY_FEATURES]
            )
