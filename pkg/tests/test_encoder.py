import numpy as np
import pytest

from emofuse import encoder as enc, tensor as T
from emofuse.blocks import LinearLayer, TransformerEncoderLayer
from emofuse.encoder import UnifiedFeature, Vocabulary
from emofuse.tensor import Parameter


@pytest.fixture(autouse=True)
def fresh_tape():
    T.active_tape().clear()
    yield
    T.active_tape().clear()


@pytest.fixture
def vocab():
    return Vocabulary.build(["good movie", "bad movie", "the speaker made"], max_size=32)


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert enc.tokenize("Good, MOVIE!") == ["good", "movie"]

    def test_keeps_apostrophes(self):
        assert enc.tokenize("don't stop") == ["don't", "stop"]


class TestVocabulary:
    def test_reserved_ids(self, vocab):
        assert vocab.id_of(enc.PAD_TOKEN) == enc.PAD_ID
        assert vocab.id_of(enc.UNK_TOKEN) == enc.UNK_ID

    def test_known_token_roundtrip(self, vocab):
        assert vocab.id_of("movie") >= 2

    def test_oov_maps_to_unk(self, vocab):
        assert vocab.id_of("zebra") == enc.UNK_ID

    def test_encode_pads_and_truncates(self, vocab):
        ids = vocab.encode("good movie", max_len=4)
        assert ids.shape == (4,)
        assert ids[2] == enc.PAD_ID and ids[3] == enc.PAD_ID
        assert vocab.encode("good movie good movie", max_len=3).shape == (3,)

    def test_nonempty_text_never_pads_leading(self, vocab):
        ids = vocab.encode("movie", max_len=3)
        assert ids[0] != enc.PAD_ID

    def test_empty_text_single_unknown(self, vocab):
        ids = vocab.encode("", max_len=3)
        assert ids[0] == enc.UNK_ID

    def test_file_roundtrip(self, tmp_path, vocab):
        path = tmp_path / "vocab.txt"
        vocab.to_file(path)
        back = Vocabulary.from_file(path)
        assert len(back) == len(vocab)
        assert back.id_of("movie") == vocab.id_of("movie")

    def test_deterministic_build(self):
        a = Vocabulary.build(["b a c", "a c"], max_size=10)
        b = Vocabulary.build(["b a c", "a c"], max_size=10)
        assert a._tokens == b._tokens
        # frequency then lexicographic: a and c tie at 2, a first
        assert a._tokens[2:] == ["a", "c", "b"]


class TestEmbedding:
    def test_same_string_same_tensor(self, vocab):
        emb = Parameter(np.random.default_rng(0).normal(size=(32, 8)).astype(np.float32))
        a = enc.embed_text("good movie", vocab, emb, max_len=4)
        b = enc.embed_text("good movie", vocab, emb, max_len=4)
        assert (a.data == b.data).all()

    def test_positions_distinguish_order(self, vocab):
        emb = Parameter(np.zeros((32, 8), dtype=np.float32))
        out = enc.embed_text("good good", vocab, emb, max_len=2)
        assert not (out.data[0] == out.data[1]).all()

    def test_oov_uses_unk_row(self, vocab):
        emb = Parameter(np.random.default_rng(1).normal(size=(32, 8)).astype(np.float32))
        a = enc.embed_text("zebra", vocab, emb, max_len=1)
        b = enc.embed_text("xylophone", vocab, emb, max_len=1)
        assert (a.data == b.data).all()

    def test_batched_ids(self, vocab):
        emb = Parameter(np.random.default_rng(2).normal(size=(32, 8)).astype(np.float32))
        ids = np.stack([vocab.encode("good movie", 4), vocab.encode("bad movie", 4)])
        out = enc.tokenize_embed(ids, emb)
        assert out.shape == (2, 4, 8)


class TestProject:
    def test_identity(self):
        proj = LinearLayer(4, 4)
        proj.weight.data = np.eye(4, dtype=np.float32)
        x = T.Tensor(np.random.default_rng(3).normal(size=(5, 4)).astype(np.float32))
        np.testing.assert_allclose(enc.project(x, proj).data, x.data, atol=1e-7)

    def test_shape_contract(self):
        proj = LinearLayer(33, 32, rng=np.random.default_rng(4))
        x = T.Tensor(np.zeros((50, 33), dtype=np.float32))
        assert enc.project(x, proj).shape == (50, 32)

    def test_width_mismatch_rejected(self):
        proj = LinearLayer(8, 4)
        with pytest.raises(T.ShapeError):
            enc.project(T.Tensor(np.zeros((5, 7))), proj)

    def test_grad_flows_to_projection(self):
        rng = np.random.default_rng(5)
        proj = LinearLayer(6, 4, rng=rng, dtype=np.float64)
        x = T.Tensor(rng.normal(size=(3, 6)))

        def loss():
            return T.reduce_sum(T.square(enc.project(x, proj)))

        report = T.grad_check(loss, proj.named_parameters(), h=1e-4, tol=1e-5)
        assert all(r["ok"] for r in report)


class TestUnify:
    def make(self, t=8, d=32, seed=6):
        rng = np.random.default_rng(seed)
        bank = Parameter(rng.normal(0, 0.02, size=(t, d)).astype(np.float32))
        layer = TransformerEncoderLayer(d, 4, rng=rng)
        return bank, layer

    def test_output_shape(self):
        bank, layer = self.make()
        seq = T.Tensor(np.random.default_rng(7).normal(size=(50, 32)).astype(np.float32))
        out = enc.unify(seq, bank, layer, "audio")
        assert out.shape == (8, 32)
        assert out.modality == "audio" and out.stage == enc.STAGE_UNIMODAL

    def test_degenerate_length_one(self):
        bank, layer = self.make()
        seq = T.Tensor(np.random.default_rng(8).normal(size=(1, 32)).astype(np.float32))
        assert enc.unify(seq, bank, layer, "audio").shape == (8, 32)

    def test_bank_participates(self):
        bank, layer = self.make()
        seq = T.Tensor(np.random.default_rng(9).normal(size=(10, 32)).astype(np.float32))
        out1 = enc.unify(seq, bank, layer, "audio").data.data
        perturbed = Parameter(bank.data.copy())
        perturbed.data[0, 0] += 1.0
        out2 = enc.unify(seq, perturbed, layer, "audio").data.data
        assert not np.allclose(out1, out2)

    def test_batched(self):
        bank, layer = self.make()
        seq = T.Tensor(np.random.default_rng(10).normal(size=(3, 10, 32)).astype(np.float32))
        assert enc.unify(seq, bank, layer, "text").shape == (3, 8, 32)

    def test_width_mismatch_rejected(self):
        bank, layer = self.make()
        with pytest.raises(T.ShapeError):
            enc.unify(T.Tensor(np.zeros((10, 16))), bank, layer, "audio")


class TestDescriptions:
    def test_description_encoding_shape(self, vocab):
        rng = np.random.default_rng(11)
        emb = Parameter(rng.normal(0, 0.02, size=(32, 16)).astype(np.float32))
        bank = Parameter(rng.normal(0, 0.02, size=(8, 16)).astype(np.float32))
        layer = TransformerEncoderLayer(16, 4, rng=rng)
        ids = vocab.encode("the speaker made such an expression", max_len=12)
        out = enc.encode_description(ids, emb, bank, layer, "audio")
        assert out.shape == (8, 16)
        assert out.stage == enc.STAGE_DESCRIPTION

    def test_identical_text_identical_feature(self, vocab):
        rng = np.random.default_rng(12)
        emb = Parameter(rng.normal(0, 0.02, size=(32, 16)).astype(np.float32))
        bank = Parameter(rng.normal(0, 0.02, size=(8, 16)).astype(np.float32))
        layer = TransformerEncoderLayer(16, 4, rng=rng)
        ids = vocab.encode("good movie", max_len=12)
        a = enc.encode_description(ids, emb, bank, layer, "visual")
        b = enc.encode_description(ids, emb, bank, layer, "visual")
        assert (a.data.data == b.data.data).all()

    def test_distinct_sentences_distinct_features(self, vocab):
        rng = np.random.default_rng(13)
        emb = Parameter(rng.normal(0, 0.02, size=(32, 16)).astype(np.float32))
        bank = Parameter(rng.normal(0, 0.02, size=(8, 16)).astype(np.float32))
        layer = TransformerEncoderLayer(16, 4, rng=rng)
        a = enc.encode_description(vocab.encode("good movie", 12), emb, bank, layer, "visual")
        b = enc.encode_description(vocab.encode("bad movie", 12), emb, bank, layer, "visual")
        assert not np.allclose(a.data.data, b.data.data)


class TestEnhance:
    def part(self, rng, modality, stage=enc.STAGE_UNIMODAL, t=8, d=16):
        return UnifiedFeature(T.Tensor(rng.normal(size=(t, d)).astype(np.float32)), modality, stage)

    def test_text_path_shape(self):
        rng = np.random.default_rng(14)
        fc = LinearLayer(48, 16, rng=rng)
        parts = [self.part(rng, "text"), self.part(rng, "audio"), self.part(rng, "visual")]
        out = enc.feature_enhance("text", parts, fc)
        assert out.shape == (8, 16)
        assert out.stage == enc.STAGE_ENHANCED

    def test_zero_fc_gives_zero(self):
        rng = np.random.default_rng(15)
        fc = LinearLayer(32, 16, rng=rng)
        fc.weight.data[:] = 0.0
        parts = [self.part(rng, "audio"), self.part(rng, "audio")]
        out = enc.feature_enhance("audio", parts, fc)
        np.testing.assert_array_equal(out.data.data, 0.0)

    def test_wrong_part_count_rejected(self):
        rng = np.random.default_rng(16)
        fc = LinearLayer(48, 16, rng=rng)
        parts = [self.part(rng, "audio")] * 3
        with pytest.raises(T.ShapeError):
            enc.feature_enhance("audio", parts, fc)

    def test_linear_in_inputs_without_activation(self):
        rng = np.random.default_rng(17)
        fc = LinearLayer(32, 16, rng=rng)
        a1, a2 = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))
        b1, b2 = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))

        def enhance(x, y):
            parts = [
                UnifiedFeature(T.Tensor(x.astype(np.float32)), "audio", enc.STAGE_UNIMODAL),
                UnifiedFeature(T.Tensor(y.astype(np.float32)), "audio", enc.STAGE_DESCRIPTION),
            ]
            return enc.feature_enhance("audio", parts, fc).data.data

        lhs = enhance(a1 + b1, a2 + b2)
        rhs = enhance(a1, a2) + enhance(b1, b2) - fc.bias.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestUnifiedFeature:
    def test_rejects_bad_rank(self):
        with pytest.raises(T.ShapeError):
            UnifiedFeature(T.Tensor(np.zeros(5)), "text", enc.STAGE_UNIMODAL)

    def test_rejects_bad_stage(self):
        with pytest.raises(ValueError):
            UnifiedFeature(T.Tensor(np.zeros((2, 2))), "text", "bogus")


class TestEncoderPathGradients:
    def test_full_path_grad_check(self, vocab):
        rng = np.random.default_rng(18)
        d = 8
        emb = Parameter(rng.normal(0, 0.02, size=(32, d)))
        bank_t = Parameter(rng.normal(0, 0.02, size=(4, d)))
        bank_a = Parameter(rng.normal(0, 0.02, size=(4, d)))
        layer_t = TransformerEncoderLayer(d, 2, rng=rng, dtype=np.float64)
        proj_a = LinearLayer(5, d, rng=rng, dtype=np.float64)
        layer_a = TransformerEncoderLayer(d, 2, rng=rng, dtype=np.float64)
        fc_a = LinearLayer(2 * d, d, rng=rng, dtype=np.float64)
        audio_raw = T.Tensor(rng.normal(size=(6, 5)))
        ids = vocab.encode("good movie", max_len=6)

        def loss():
            d_a = enc.encode_description(ids, emb, bank_a, layer_t, "audio")
            x_a = enc.unify(enc.project(audio_raw, proj_a), bank_a, layer_a, "audio")
            h0 = enc.feature_enhance("audio", [x_a, d_a], fc_a)
            return T.reduce_mean(T.square(h0.data))

        del bank_t  # text bank is unused on the audio-only path
        params = list(layer_t.named_parameters("layer_t"))
        params += list(proj_a.named_parameters("proj_a"))
        params += list(fc_a.named_parameters("fc_a"))
        params += [("emb", emb), ("bank_a", bank_a)]
        report = T.grad_check(loss, params, h=1e-4, tol=1e-3, max_entries=16, rng=np.random.default_rng(1))
        failures = [r for r in report if not r["ok"]]
        assert not failures, failures
