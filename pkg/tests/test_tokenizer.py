"""Tests for BPE training, fragment-aware encoding and vocab files."""

import json
import random

import pytest

from verispec.errors import VocabError
from verispec.tokenizer import (
    BOS,
    ENCODE_CACHE_SIZE,
    EOS,
    FIRST_MERGE_ID,
    FRAG,
    IGNORE,
    PAD,
    SPECIAL_SET,
    Vocab,
    decode,
    encode,
    encode_fragmented,
    load_vocab,
    save_vocab,
    strip_specials,
    train_bpe,
)
from verispec.verilog_syntax import default_significant_tokens, lexical_significant_tokens, segment


class TestTrainBpe:
    def test_single_merge_on_repeated_byte(self):
        vocab = train_bpe([b"aaaa"], FIRST_MERGE_ID + 1)
        assert vocab.merges == ((ord("a"), ord("a")),)
        assert vocab.token_bytes[FIRST_MERGE_ID] == b"aa"
        assert vocab.size == FIRST_MERGE_ID + 1

    def test_no_merge_budget_gives_byte_vocab(self):
        vocab = train_bpe([b"assign y = a;"], FIRST_MERGE_ID)
        assert vocab.merges == ()
        assert vocab.size == 256 + 5

    def test_frequency_ties_pick_smallest_pair(self):
        # ("a","b") and ("c","d") both occur once; ("a","b") is smaller.
        vocab = train_bpe([b"ab", b"cd"], FIRST_MERGE_ID + 1)
        assert vocab.merges == ((ord("a"), ord("b")),)

    def test_deterministic(self, corpus_dir):
        texts = [p.read_bytes() for p in sorted(corpus_dir.glob("*.v"))[:2]]
        assert train_bpe(texts, 320).merges == train_bpe(texts, 320).merges

    def test_stops_when_no_pairs_remain(self):
        vocab = train_bpe([b"ab"], FIRST_MERGE_ID + 10)
        assert len(vocab.merges) == 1

    def test_empty_corpus_rejected(self):
        with pytest.raises(VocabError):
            train_bpe([], 300)
        with pytest.raises(VocabError):
            train_bpe([b""], 300)

    def test_vocab_size_below_alphabet_rejected(self):
        with pytest.raises(VocabError):
            train_bpe([b"abc"], 260)

    def test_specials_are_never_merge_results(self, corpus_vocab):
        for left, right in corpus_vocab.merges:
            assert left not in SPECIAL_SET and right not in SPECIAL_SET
        assert len({FRAG, PAD, IGNORE, BOS, EOS}) == 5


class TestEncodeDecode:
    def test_empty(self, corpus_vocab):
        assert encode(b"", corpus_vocab).ids == []
        assert decode([], corpus_vocab) == b""

    def test_keyword_roundtrip(self, corpus_vocab):
        ids = encode("assign", corpus_vocab).ids
        assert decode(ids, corpus_vocab) == b"assign"

    def test_random_bytes_roundtrip(self, corpus_vocab):
        rng = random.Random(3)
        data = bytes(rng.randrange(256) for _ in range(1024))
        assert decode(encode(data, corpus_vocab), corpus_vocab) == data

    def test_specials_decode_to_nothing(self, corpus_vocab):
        assert decode([FRAG, FRAG], corpus_vocab) == b""
        assert decode([BOS, ord("x"), PAD, IGNORE, EOS], corpus_vocab) == b"x"

    def test_unknown_id_rejected(self, corpus_vocab):
        with pytest.raises(VocabError):
            decode([corpus_vocab.size], corpus_vocab)

    def test_encode_cache_is_bounded_per_vocab(self):
        vocab = Vocab.from_merges([(97, 98)])
        assert vocab.encode_cache_info().maxsize == ENCODE_CACHE_SIZE
        assert encode(b"abab", vocab).ids == [FIRST_MERGE_ID, FIRST_MERGE_ID]
        assert encode(b"abab", vocab).ids == [FIRST_MERGE_ID, FIRST_MERGE_ID]
        info = vocab.encode_cache_info()
        assert (info.hits, info.misses, info.currsize) == (1, 1, 1)
        assert Vocab.from_merges([(97, 98)]).encode_cache_info().currsize == 0

    def test_cache_does_not_affect_equality(self):
        used = Vocab.from_merges([(97, 98)])
        encode(b"ab", used)
        fresh = Vocab.from_merges([(97, 98)])
        assert used == fresh
        assert hash(used) == hash(fresh)


class TestEncodeFragmented:
    def test_two_fragments(self, corpus_vocab):
        fc = segment(b"a b", lexical_significant_tokens())
        seq = encode_fragmented(fc, corpus_vocab)
        first = encode(b"a ", corpus_vocab).ids
        second = encode(b"b", corpus_vocab).ids
        assert seq.ids == first + [FRAG] + second + [FRAG]
        assert seq.provenance == [0] * (len(first) + 1) + [1] * (len(second) + 1)

    def test_counter_frag_count_and_roundtrip(self, counter_fragments, counter_source, corpus_vocab):
        seq = encode_fragmented(counter_fragments, corpus_vocab)
        assert seq.count(FRAG) == len(counter_fragments)
        assert decode(strip_specials(seq.ids), corpus_vocab) == counter_source

    def test_no_token_crosses_a_fragment_boundary(self, counter_fragments, corpus_vocab):
        seq = encode_fragmented(counter_fragments, corpus_vocab)
        rebuilt = [b""] * len(counter_fragments)
        for token, index in zip(seq.ids, seq.provenance):
            rebuilt[index] += corpus_vocab.token_bytes[token]
        assert rebuilt == counter_fragments.texts

    def test_every_corpus_file_roundtrips(self, corpus_dir, corpus_vocab):
        for path in sorted(corpus_dir.glob("*.v")):
            source = path.read_bytes()
            fc = segment(source, default_significant_tokens(source))
            seq = encode_fragmented(fc, corpus_vocab)
            assert seq.count(FRAG) == len(fc), path.name
            assert decode(strip_specials(seq.ids), corpus_vocab) == source, path.name


class TestVocabFiles:
    def test_save_load(self, tmp_path, corpus_vocab):
        path = save_vocab(corpus_vocab, tmp_path / "vocab.json")
        loaded = load_vocab(path)
        assert loaded.merges == corpus_vocab.merges
        assert loaded.fingerprint() == corpus_vocab.fingerprint()

    def test_file_is_versioned(self, tmp_path, corpus_vocab):
        path = save_vocab(corpus_vocab, tmp_path / "vocab.json")
        data = json.loads(path.read_text())
        assert data["format"] == "verispec-vocab/1"
        assert data["specials"] == {"FRAG": 256, "PAD": 257, "IGNORE": 258, "BOS": 259, "EOS": 260}

    def test_missing_file(self, tmp_path):
        with pytest.raises(VocabError):
            load_vocab(tmp_path / "absent.json")

    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "vocab.json"
        path.write_text(json.dumps({"format": "other", "merges": []}))
        with pytest.raises(VocabError):
            load_vocab(path)

    def test_corrupt_merge_table(self, tmp_path, corpus_vocab):
        data = corpus_vocab.to_dict()
        data["merges"] = [[FRAG, 97]]
        path = tmp_path / "vocab.json"
        path.write_text(json.dumps(data))
        with pytest.raises(VocabError):
            load_vocab(path)

    def test_from_merges_builds_byte_table(self):
        vocab = Vocab.from_merges([(97, 98), (FIRST_MERGE_ID, 99)])
        assert vocab.token_bytes[FIRST_MERGE_ID + 1] == b"abc"
        assert encode(b"abc", vocab).ids == [FIRST_MERGE_ID + 1]
