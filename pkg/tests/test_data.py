import json

import numpy as np
import pytest

from emofuse.config import ConfigError, TrainConfig, config_from_dict, config_to_dict, desk_config, load_config, paper_scale_config, save_config
from emofuse.data import DataError, collate, iter_batches, load_dataset, prepare
from emofuse.synthetic import SyntheticSpec, generate_synthetic

SMALL = dict(n_train=30, n_valid=8, n_test=8)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("synth")
    generate_synthetic(SyntheticSpec(seed=21, **SMALL), path)
    return path


def small_cfg(**overrides):
    return desk_config(epochs=2, vocab_size=256, **overrides)


class TestIngest:
    def test_roundtrip_counts(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        assert len(ds.split("train")) == 30
        assert len(ds.split("valid")) == 8
        assert len(ds.split("test")) == 8

    def test_empty_dir_hard_error(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)

    def test_missing_dir_hard_error(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope")

    def test_truncated_row_skipped_with_warning(self, tmp_path, caplog):
        generate_synthetic(SyntheticSpec(seed=22, **SMALL), tmp_path)
        au_files = sorted((tmp_path / "au").glob("train-*.csv"))
        lines = au_files[0].read_text().splitlines()
        lines[3] = "2,0.1"
        au_files[0].write_text("\n".join(lines) + "\n")
        with caplog.at_level("WARNING"):
            ds = load_dataset(tmp_path)
        assert len(ds.split("train")) == 29
        assert any("skipping" in r.message for r in caplog.records)

    def test_missing_modality_file_skips_utterance(self, tmp_path, caplog):
        generate_synthetic(SyntheticSpec(seed=23, **SMALL), tmp_path)
        (tmp_path / "prosody" / "train-00003.csv").unlink()
        with caplog.at_level("WARNING"):
            ds = load_dataset(tmp_path)
        assert len(ds.split("train")) == 29

    def test_too_many_skips_hard_error(self, tmp_path):
        generate_synthetic(SyntheticSpec(seed=24, **SMALL), tmp_path)
        for path in list((tmp_path / "au").glob("train-*.csv"))[:10]:
            path.unlink()
        with pytest.raises(DataError, match="unusable"):
            load_dataset(tmp_path)

    def test_bad_json_line_skipped(self, tmp_path, caplog):
        generate_synthetic(SyntheticSpec(seed=25, **SMALL), tmp_path)
        path = tmp_path / "train.jsonl"
        lines = path.read_text().splitlines()
        lines[0] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        with caplog.at_level("WARNING"):
            ds = load_dataset(tmp_path)
        assert len(ds.split("train")) == 29

    def test_duplicate_ids_rejected(self, tmp_path):
        generate_synthetic(SyntheticSpec(seed=26, **SMALL), tmp_path)
        path = tmp_path / "test.jsonl"
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines + [lines[0]]) + "\n")
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(tmp_path)


class TestPrepare:
    def test_descriptions_and_ids_filled(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        prepare(ds, small_cfg())
        u = ds.split("train")[0]
        assert u.aed.startswith("The Speaker made such an tone:")
        assert u.ved.startswith("The speaker made")
        assert u.text_ids.shape == (24,)
        assert u.audio.shape == (30, 12)
        assert ds.vocab is not None and ds.tertiles is not None

    def test_tertile_scope_changes_table(self, dataset_dir):
        ds_train = prepare(load_dataset(dataset_dir), small_cfg(tertile_scope="train"))
        ds_all = prepare(load_dataset(dataset_dir), small_cfg(tertile_scope="all"))
        assert ds_train.tertiles.bounds != ds_all.tertiles.bounds

    def test_width_mismatch_rejected(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        with pytest.raises(DataError, match="audio width"):
            prepare(ds, small_cfg(audio_dim=9))

    def test_descriptions_tokenize_without_unknowns(self, dataset_dir):
        from emofuse.encoder import UNK_ID

        ds = load_dataset(dataset_dir)
        prepare(ds, small_cfg())
        for u in ds.split("train"):
            assert UNK_ID not in u.aed_ids
            assert UNK_ID not in u.ved_ids


class TestBatches:
    def test_collate_shapes(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        cfg = small_cfg()
        prepare(ds, cfg)
        batch = collate(ds.split("train")[:5])
        assert batch.text_ids.shape == (5, cfg.max_text_len)
        assert batch.audio.shape == (5, cfg.audio_len, cfg.audio_dim)
        assert batch.labels.shape == (5,)
        assert len(batch) == 5

    def test_batches_cover_split_once(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        prepare(ds, small_cfg())
        seen = []
        for batch in iter_batches(ds.split("train"), 8):
            seen.extend(batch.uids)
        assert sorted(seen) == sorted(u.uid for u in ds.split("train"))

    def test_shuffle_is_seeded(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        prepare(ds, small_cfg())
        order1 = [b.uids for b in iter_batches(ds.split("train"), 8, rng=np.random.default_rng(0))]
        order2 = [b.uids for b in iter_batches(ds.split("train"), 8, rng=np.random.default_rng(0))]
        order3 = [b.uids for b in iter_batches(ds.split("train"), 8, rng=np.random.default_rng(1))]
        assert order1 == order2
        assert order1 != order3


class TestConfig:
    def test_defaults_valid(self):
        desk_config()
        paper_scale_config()

    def test_depth_constraint(self):
        with pytest.raises(ConfigError):
            TrainConfig(ceu_layers=2, mfu_layers=2)

    def test_heads_divisibility(self):
        with pytest.raises(ConfigError):
            TrainConfig(dim=30, heads=4)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"model": {"dim": 32, "bogus": 1}})
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"bogus_section": {"dim": 32}})

    def test_wrong_section_rejected(self):
        with pytest.raises(ConfigError, match="belongs in section"):
            config_from_dict({"model": {"seed": 3}})

    def test_yaml_roundtrip(self, tmp_path):
        cfg = desk_config(seed=99, learning_rate=3e-4)
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        back = load_config(path)
        assert back == cfg

    def test_flat_keys_accepted(self):
        cfg = config_from_dict({"dim": 16, "heads": 2})
        assert cfg.dim == 16

    def test_every_field_addressable(self, tmp_path):
        cfg = desk_config()
        d = config_to_dict(cfg)
        from dataclasses import fields

        flat = {k for sec in d.values() for k in sec}
        assert flat == {f.name for f in fields(TrainConfig)}
