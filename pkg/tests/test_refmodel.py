"""Tests for the n-gram multi-head model, its model file and the test doubles."""

import random
import time

import numpy as np
import pytest

from verispec.errors import CorpusError, DecodeError, ModelFileError, ScriptExhaustedError
from verispec.refmodel import (
    NGramMultiHead,
    ScriptedMock,
    load_model,
    model_fingerprint,
    oracle_mock,
    save_model,
    train_ngram,
)
from verispec.specdec import AcceptanceParams, SpeculativeModel, StepOutput, StopCriteria, decode
from verispec.tokenizer import EOS, FRAG, TokenSequence

A, B, C, D = 65, 66, 67, 68


class TestTrainNgram:
    def test_bigram_counts(self):
        model = train_ngram([[A, B, A, B, A]], n=2, H=1, alpha=0.0)
        assert model.distribution(0, [A])[B] == 1.0
        assert model.distribution(0, [B])[A] == 1.0
        assert model.counts[0][(A,)] == {B: 2}
        assert model.counts[1][(A,)] == {A: 2}

    def test_unigram_backoff(self):
        model = train_ngram([[A, B, A, B, A]], n=2, H=0, alpha=0.0)
        dist = model.distribution(0, [FRAG])
        assert dist[A] == pytest.approx(0.6)
        assert dist[B] == pytest.approx(0.4)

    def test_offset_without_data_is_uniform(self):
        model = train_ngram([[A, B]], n=2, H=3, alpha=1.0)
        dist = model.distribution(3, [A])
        assert np.allclose(dist, 1.0 / model.vocab_size)

    def test_accepts_token_sequences(self):
        model = train_ngram([TokenSequence([A, FRAG, B, FRAG])], n=3, H=2, alpha=0.1)
        assert model.num_heads == 2
        assert model.order == 3

    def test_retraining_is_deterministic(self, corpus_sequences):
        first = train_ngram(corpus_sequences, 3, 2, 0.01)
        second = train_ngram(corpus_sequences, 3, 2, 0.01)
        assert first.counts == second.counts

    def test_distributions_are_normalized(self, trained_ngram, corpus_sequences):
        rng = random.Random(1)
        for _ in range(50):
            seq = rng.choice(corpus_sequences)
            cut = rng.randrange(len(seq))
            for offset in range(trained_ngram.num_heads + 1):
                dist = trained_ngram.distribution(offset, seq[:cut])
                assert dist.sum() == pytest.approx(1.0, abs=1e-9)
                assert dist.min() > 0.0

    @pytest.mark.parametrize("kwargs", [{"n": 0}, {"H": -1}, {"alpha": -0.5}])
    def test_invalid_parameters(self, kwargs):
        params = {"n": 2, "H": 1, "alpha": 0.1, **kwargs}
        with pytest.raises(DecodeError):
            train_ngram([[A, B]], **params)

    def test_empty_corpus(self):
        with pytest.raises(CorpusError):
            train_ngram([[], []], 2, 1, 0.1)

    def test_vocab_too_small(self):
        with pytest.raises(DecodeError):
            train_ngram([[A, 400]], 2, 1, 0.1, vocab_size=300)


class TestLabelConstructions:
    SEQ = [A, B, FRAG, C, D, FRAG]

    def test_medusa_heads_count_every_offset(self):
        model = train_ngram([self.SEQ], n=2, H=2, alpha=0.0, labels="medusa")
        assert model.counts[2][(A,)] == {C: 1}
        assert model.distribution(2, [A])[C] == 1.0

    def test_syntax_heads_skip_offsets_past_the_fragment(self):
        model = train_ngram([self.SEQ], n=2, H=2, alpha=0.0, labels="syntax")
        assert (A,) not in model.counts[2]
        assert model.counts[2][()] == {FRAG: 2}
        assert model.distribution(2, [A])[FRAG] == 1.0

    def test_base_table_does_not_depend_on_labels(self, corpus_sequences):
        syntax = train_ngram(corpus_sequences, 3, 4, 0.01, labels="syntax")
        medusa = train_ngram(corpus_sequences, 3, 4, 0.01, labels="medusa")
        assert syntax.counts[0] == medusa.counts[0]
        assert syntax.counts[1:] != medusa.counts[1:]

    def test_zero_heads_accepts_either_labels(self):
        assert train_ngram([self.SEQ], 2, 0, 0.1, labels="syntax").counts == train_ngram([self.SEQ], 2, 0, 0.1).counts

    def test_unknown_labels(self):
        with pytest.raises(DecodeError):
            train_ngram([self.SEQ], 2, 1, 0.1, labels="causal")

    def test_labels_survive_the_model_file(self, tmp_path):
        model = train_ngram([self.SEQ], 2, 2, 0.1, labels="syntax")
        loaded = load_model(save_model(model, tmp_path / "syntax.model"))
        assert loaded.labels == "syntax"
        assert loaded.counts == model.counts


class TestNgramContract:
    def test_satisfies_protocol(self, trained_ngram):
        assert isinstance(trained_ngram, SpeculativeModel)

    def test_verify_matches_step(self, trained_ngram, corpus_sequences):
        rng = random.Random(2)
        for _ in range(100):
            seq = rng.choice(corpus_sequences)
            cut = rng.randrange(len(seq))
            context = seq[:cut]
            proposed = [rng.randrange(trained_ngram.vocab_size) for _ in range(rng.randint(1, 5))]
            verified = trained_ngram.verify(context, proposed)
            for j in range(len(proposed)):
                expected = trained_ngram.step(context + proposed[:j]).base_dist
                assert np.array_equal(verified[j], expected)

    def test_tree_verification_is_one_call(self, trained_ngram, corpus_sequences):
        context = corpus_sequences[0][:10]
        candidates = [corpus_sequences[0][10:14], corpus_sequences[1][:3]]
        verification = trained_ngram.verify_tree(context, candidates)
        assert verification.calls == 1
        for path, dists in zip(candidates, verification.base_dists):
            assert np.array_equal(dists, trained_ngram.verify(context, path))
        follow = verification.step_at(0, 2)
        direct = trained_ngram.step(context + candidates[0][:2])
        assert np.array_equal(follow.base_dist, direct.base_dist)
        assert np.array_equal(follow.head_dists, direct.head_dists)

    def test_head_dists_shape(self, trained_ngram):
        out = trained_ngram.step([])
        assert out.head_dists.shape == (4, trained_ngram.vocab_size)

    def test_latency_is_simulated(self):
        model = train_ngram([[A, B, FRAG]], 2, 1, 0.1, latency_ms=10.0)
        started = time.perf_counter()
        for _ in range(50):
            model.step([A])
        assert time.perf_counter() - started >= 0.5


class TestModelFile:
    def test_roundtrip(self, tmp_path, trained_ngram, corpus_sequences):
        path = save_model(trained_ngram, tmp_path / "ngram.model")
        loaded = load_model(path)
        assert isinstance(loaded, NGramMultiHead)
        assert loaded.counts == trained_ngram.counts
        assert (loaded.order, loaded.num_heads, loaded.vocab_size) == (3, 4, trained_ngram.vocab_size)
        context = corpus_sequences[3][:7]
        assert np.array_equal(loaded.step(context).head_dists, trained_ngram.step(context).head_dists)

    def test_equal_models_give_equal_files(self, tmp_path, corpus_sequences):
        first = save_model(train_ngram(corpus_sequences, 2, 1, 0.1), tmp_path / "a.model")
        second = save_model(train_ngram(corpus_sequences, 2, 1, 0.1), tmp_path / "b.model")
        assert model_fingerprint(first) == model_fingerprint(second)

    def test_latency_override_on_load(self, tmp_path):
        path = save_model(train_ngram([[A, B]], 1, 0, 0.5), tmp_path / "unigram.model")
        assert load_model(path, latency_ms=3.0).latency_ms == 3.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "absent.model")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "garbage.model"
        path.write_bytes(b"not a model\n\x00\x01")
        with pytest.raises(ModelFileError):
            load_model(path)

    def test_wrong_format_tag(self, tmp_path):
        path = save_model(train_ngram([[A, B]], 2, 0, 0.5), tmp_path / "m.model")
        data = path.read_bytes().replace(b"verispec-ngram/1", b"other-format/9")
        path.write_bytes(data)
        with pytest.raises(ModelFileError):
            load_model(path)


class TestScriptedMock:
    def test_replays_in_order(self):
        first = StepOutput(np.array([1.0, 0.0]), np.empty((0, 2)))
        second = StepOutput(np.array([0.0, 1.0]), np.empty((0, 2)))
        model = ScriptedMock([first, second])
        assert model.step([]) is first
        assert model.step([0]) is second
        assert model.calls == 2

    def test_exhausted_steps(self):
        model = ScriptedMock([StepOutput(np.array([1.0]), np.empty((0, 1)))])
        model.step([])
        with pytest.raises(ScriptExhaustedError):
            model.step([0])

    def test_exhausted_verifies(self):
        model = ScriptedMock([], verifies=[[[1.0, 0.0]]])
        model.verify([], [0])
        with pytest.raises(ScriptExhaustedError):
            model.verify([], [0])

    def test_short_verify_script(self):
        model = ScriptedMock([], verifies=[[[1.0, 0.0]]])
        with pytest.raises(DecodeError):
            model.verify([], [0, 1])


class TestOracleMock:
    def test_heads_stop_at_fragment_end(self):
        model = oracle_mock([A, B, FRAG, A, FRAG], num_heads=4)
        out = model.step([])
        assert int(np.argmax(out.base_dist)) == A
        assert [int(np.argmax(h)) for h in out.head_dists] == [B, FRAG, EOS, EOS]

    def test_verify_is_one_hot_on_target(self):
        model = oracle_mock([A, B, FRAG], num_heads=2)
        dists = model.verify([A], [B, FRAG, A])
        assert [int(np.argmax(d)) for d in dists] == [B, FRAG, EOS]

    def test_target_outside_vocab(self):
        with pytest.raises(DecodeError):
            oracle_mock([A, 999], vocab_size=300)

    def test_steps_equal_fragments_for_every_corpus_file(self, corpus_sequences):
        for sequence in corpus_sequences:
            target = sequence[:-1]
            longest = max(len(chunk) for chunk in _fragments(target))
            model = oracle_mock(target, num_heads=longest)
            result = decode(model, [], AcceptanceParams(), StopCriteria(len(target)))
            assert result.generated == target
            assert len(result.trace.steps) == target.count(FRAG)


def _fragments(ids):
    chunk = []
    for token in ids:
        chunk.append(token)
        if token == FRAG:
            yield chunk
            chunk = []
