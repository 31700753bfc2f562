import json
from pathlib import Path

import numpy as np
import pytest

from emofuse import edg
from emofuse.synthetic import (
    POSITIVE_AUS,
    SyntheticSpec,
    full_vocabulary,
    generate_synthetic,
    make_utterance,
    probe_accuracy,
)

SMALL = dict(n_train=40, n_valid=10, n_test=10)


def tree_bytes(root):
    out = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic(SyntheticSpec(seed=5, **SMALL), a)
        generate_synthetic(SyntheticSpec(seed=5, **SMALL), b)
        ta, tb = tree_bytes(a), tree_bytes(b)
        assert ta.keys() == tb.keys()
        for name in ta:
            assert ta[name] == tb[name], name

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic(SyntheticSpec(seed=5, **SMALL), a)
        generate_synthetic(SyntheticSpec(seed=6, **SMALL), b)
        assert tree_bytes(a) != tree_bytes(b)

    def test_utterances_independent_of_order(self):
        spec = SyntheticSpec(seed=9, **SMALL)
        late_first = make_utterance(spec, "train", 7)
        again = make_utterance(spec, "train", 7)
        assert late_first.text == again.text
        np.testing.assert_array_equal(late_first.audio, again.audio)


class TestEmissionRules:
    def test_max_label_hits_max_run(self):
        from emofuse.synthetic import _sample_au

        spec = SyntheticSpec(seed=11, zero_rate=0.0, **SMALL)
        rng = np.random.default_rng(0)
        intensity, signed_run = _sample_au(rng, 3.0, spec)
        assert signed_run == spec.max_au_run()
        track = edg.AUTrack.from_intensity(intensity)
        cands = {c.au_id: c for c in edg.detect_candidates(track)}
        assert cands[POSITIVE_AUS[0]].duration >= spec.max_au_run()

    def test_positive_and_negative_aus_disjoint(self):
        spec = SyntheticSpec(seed=12, zero_rate=0.0, **SMALL)
        pos = neg = None
        for i in range(200):
            u = make_utterance(spec, "train", i)
            if u.label > 1.0 and pos is None:
                pos = u
            if u.label < -1.0 and neg is None:
                neg = u
            if pos is not None and neg is not None:
                break
        assert pos is not None and neg is not None
        pos_track = edg.AUTrack.from_intensity(pos.au_intensity)
        pos_cands = {c.au_id for c in edg.detect_candidates(pos_track)}
        assert "AU12" in pos_cands and "AU04" not in pos_cands
        neg_track = edg.AUTrack.from_intensity(neg.au_intensity)
        neg_cands = {c.au_id for c in edg.detect_candidates(neg_track)}
        assert "AU04" in neg_cands and "AU12" not in neg_cands

    def test_prosody_mean_shift_tracks_label(self):
        spec = SyntheticSpec(seed=13, zero_rate=0.0, **SMALL)
        utts = [make_utterance(spec, "train", i) for i in range(60)]
        labels = np.array([u.label for u in utts])
        pitch_means = np.array([u.prosody.pitch.mean() for u in utts])
        assert np.corrcoef(labels, pitch_means)[0, 1] > 0.9

    def test_probe_recovers_label_sign(self):
        spec = SyntheticSpec(seed=14, **SMALL)
        utts = [make_utterance(spec, "train", i) for i in range(200)]
        assert probe_accuracy(utts) >= 0.95


class TestOutputs:
    def test_file_layout_and_counts(self, tmp_path):
        summary = generate_synthetic(SyntheticSpec(seed=15, **SMALL), tmp_path)
        assert summary["counts"] == {"train": 40, "valid": 10, "test": 10}
        assert summary["probe_acc2"] >= 0.95
        for split, n in summary["counts"].items():
            lines = (tmp_path / f"{split}.jsonl").read_text().splitlines()
            assert len(lines) == n
        assert len(list((tmp_path / "au").glob("*.csv"))) == 60
        assert (tmp_path / "vocab.txt").exists()
        assert (tmp_path / "tertiles.json").exists()

    def test_records_reference_existing_files(self, tmp_path):
        generate_synthetic(SyntheticSpec(seed=16, **SMALL), tmp_path)
        for line in (tmp_path / "train.jsonl").read_text().splitlines():
            rec = json.loads(line)
            assert (tmp_path / rec["au_file"]).exists()
            assert (tmp_path / rec["prosody_file"]).exists()
            assert set(rec) == {"id", "text", "audio", "visual", "au_file", "prosody_file", "label"}

    def test_zero_samples_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic(SyntheticSpec(n_train=0, n_valid=0, n_test=0), tmp_path)

    def test_vocabulary_covers_all_descriptions(self, tmp_path):
        from emofuse.encoder import tokenize

        vocab_tokens = set(full_vocabulary())
        generate_synthetic(SyntheticSpec(seed=17, **SMALL), tmp_path)
        for line in (tmp_path / "train.jsonl").read_text().splitlines():
            rec = json.loads(line)
            for tok in tokenize(rec["text"]):
                assert tok in vocab_tokens
