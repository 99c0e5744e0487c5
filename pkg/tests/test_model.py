"""SpanTagger estimator surface: fit/predict/score, params protocol, persistence."""

import numpy as np
import pytest

from fedspan.corpus import Polarity, Sentence, Span, Triplet
from fedspan.model import NotFittedError, SpanTagger, select_proto_spans, validate_sentences
from fedspan.prototypes import PrototypeSet
from fedspan.synth import default_synth_config, generate_synthetic


@pytest.fixture(scope="module")
def tiny_corpus():
    corpora = generate_synthetic(default_synth_config(), 19)
    return corpora[0]


def small_tagger(**kw):
    defaults = dict(embed_dim=12, hidden_dim=12, rep_dim=8, vocab_size=256, seed=0)
    defaults.update(kw)
    return SpanTagger(**defaults)


class TestParamsProtocol:
    def test_get_params_round_trips_through_constructor(self):
        tagger = SpanTagger(rep_dim=12, learning_rate=0.5, seed=3)
        clone = SpanTagger(**tagger.get_params())
        assert clone.get_params() == tagger.get_params()

    def test_set_params_returns_self_and_resets(self):
        tagger = small_tagger()
        tagger.partial_fit([Sentence(("nice", "view"))], epochs=1)
        assert tagger.is_fitted
        out = tagger.set_params(rep_dim=4)
        assert out is tagger
        assert tagger.rep_dim == 4
        assert not tagger.is_fitted

    def test_set_params_unknown_key(self):
        with pytest.raises(ValueError):
            SpanTagger().set_params(bogus=1)

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            SpanTagger().predict([Sentence(("hello",))])


class TestValidation:
    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            validate_sentences([])

    def test_bad_triplet_named_with_index(self):
        bad = Sentence(("a", "b"), (Triplet(Span(0, 5), Span(1, 1), Polarity.POS),))
        with pytest.raises(ValueError, match="sentence 1"):
            validate_sentences([Sentence(("ok",)), bad])

    def test_fit_validates(self):
        with pytest.raises(ValueError):
            small_tagger().fit([Sentence(())], epochs=1)


class TestProtoSpanSelection:
    def test_all_labeled_plus_capped_nulls(self):
        gold = np.array([0, 3, 0, 0, 9, 0, 0, 0])
        rng = np.random.default_rng(0)
        sel = select_proto_spans(gold, rng, null_ratio=1.0)
        labels = gold[sel]
        assert {1, 4} <= set(sel)  # labeled spans always kept
        assert (labels != 0).sum() == 2
        assert (labels == 0).sum() == 2  # capped at the labeled count

    def test_no_labeled_spans_selects_nothing(self):
        sel = select_proto_spans(np.zeros(6, dtype=int), np.random.default_rng(0), 1.0)
        assert len(sel) == 0

    def test_zero_ratio_keeps_only_labeled(self):
        gold = np.array([0, 3, 0, 9])
        sel = select_proto_spans(gold, np.random.default_rng(0), 0.0)
        assert list(sel) == [1, 3]

    def test_selection_sorted_and_unique(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            gold = rng.integers(0, 3, 30)
            sel = select_proto_spans(gold, rng, 1.0)
            assert list(sel) == sorted(set(int(i) for i in sel))


class TestTraining:
    def test_fit_resets_partial_fit_continues(self, tiny_corpus):
        sentences = tiny_corpus.train[:10]
        a = small_tagger().fit(sentences, epochs=2)
        steps_after_fit = a.n_steps_
        a.partial_fit(sentences, epochs=1)
        assert a.n_steps_ > steps_after_fit
        a.fit(sentences, epochs=2)
        assert a.n_steps_ == steps_after_fit

    def test_same_seed_reproducible(self, tiny_corpus):
        sentences = tiny_corpus.train[:12]
        a = small_tagger().fit(sentences, epochs=2)
        b = small_tagger().fit(sentences, epochs=2)
        for (_, x), (_, y) in zip(a.params_.blocks(), b.params_.blocks()):
            assert np.array_equal(x, y)
        assert a.last_fit_metrics_ == b.last_fit_metrics_

    def test_different_seed_differs(self, tiny_corpus):
        sentences = tiny_corpus.train[:12]
        a = small_tagger(seed=0).fit(sentences, epochs=1)
        b = small_tagger(seed=1).fit(sentences, epochs=1)
        assert not np.array_equal(a.params_.w_cls, b.params_.w_cls)

    def test_prototypes_tracked_during_fit(self, tiny_corpus):
        tagger = small_tagger().fit(tiny_corpus.train[:10], epochs=1)
        assert isinstance(tagger.prototypes_, PrototypeSet)
        assert tagger.prototypes_.dim == tagger.rep_dim
        assert len(tagger.prototypes_.vectors) > 0

    def test_gold_assignment_mode(self, tiny_corpus):
        tagger = small_tagger(prototype_assignment="gold").fit(tiny_corpus.train[:10], epochs=1)
        assert len(tagger.prototypes_.vectors) > 0

    def test_global_prototypes_change_training(self, tiny_corpus):
        sentences = tiny_corpus.train[:10]
        plain = small_tagger(align_weight=0.5, sep_weight=0.1).fit(sentences, epochs=2)
        protos = PrototypeSet(8, {c: np.ones(8) for c in range(4)})
        guided = small_tagger(align_weight=0.5, sep_weight=0.1).fit(
            sentences, epochs=2, global_prototypes=protos
        )
        assert not np.array_equal(plain.params_.w_proj, guided.params_.w_proj)
        assert guided.last_fit_metrics_["proto_loss"] != 0.0

    def test_round_one_equals_zero_proto_weight(self, tiny_corpus):
        # Without globals the prototype term is inert regardless of weight.
        sentences = tiny_corpus.train[:10]
        a = small_tagger(proto_weight=0.0).fit(sentences, epochs=1)
        b = small_tagger(proto_weight=1.0).fit(sentences, epochs=1)
        for (_, x), (_, y) in zip(a.params_.blocks(), b.params_.blocks()):
            assert np.array_equal(x, y)

    def test_dim_mismatch_rejected(self, tiny_corpus):
        protos = PrototypeSet(3, {0: np.ones(3)})
        with pytest.raises(ValueError):
            small_tagger().fit(tiny_corpus.train[:4], global_prototypes=protos)

    def test_fit_metrics_shape(self, tiny_corpus):
        tagger = small_tagger().fit(tiny_corpus.train[:8], epochs=1)
        metrics = tagger.last_fit_metrics_
        assert {"train_loss", "tag_loss", "proto_loss", "batches"} == set(metrics)
        assert metrics["proto_loss"] == 0.0


class TestInference:
    def test_predict_shapes(self, tiny_corpus):
        tagger = small_tagger().fit(tiny_corpus.train[:10], epochs=1)
        preds = tagger.predict(tiny_corpus.val[:5])
        assert len(preds) == 5
        for row in preds:
            for triplet in row:
                assert triplet.aspect != triplet.opinion

    def test_score_matches_evaluate(self, tiny_corpus):
        tagger = small_tagger().fit(tiny_corpus.train[:10], epochs=1)
        assert tagger.score(tiny_corpus.val[:5]) == tagger.evaluate(tiny_corpus.val[:5]).f1

    def test_overfit_small_fixture_reaches_perfect_f1(self):
        from fedspan.corpus import parse_corpus

        from conftest import OVERFIT_FIXTURE

        sentences = parse_corpus(OVERFIT_FIXTURE)
        tagger = SpanTagger(seed=0)
        tagger.fit(sentences, epochs=50)
        assert tagger.score(sentences) == 1.0


class TestPersistence:
    def test_save_load_identical_predictions(self, tiny_corpus, tmp_path):
        tagger = small_tagger().fit(tiny_corpus.train[:10], epochs=2)
        path = tmp_path / "tagger.ckpt"
        tagger.save(path)
        loaded = SpanTagger.load(path)
        val = tiny_corpus.val[:8]
        assert loaded.predict(val) == tagger.predict(val)
        assert loaded.get_params()["rep_dim"] == tagger.rep_dim

    def test_save_requires_fit(self, tmp_path):
        with pytest.raises(NotFittedError):
            SpanTagger().save(tmp_path / "x.ckpt")
