"""Shared fixtures for the verispec test suite."""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from verispec.refmodel import train_ngram  # noqa: E402
from verispec.tokenizer import EOS, FRAG, encode_fragmented, train_bpe  # noqa: E402
from verispec.verilog_syntax import default_significant_tokens, segment  # noqa: E402

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    """Keep a developer's VERISPEC_* variables out of the tests."""
    monkeypatch.delenv("VERISPEC_CONFIG", raising=False)
    monkeypatch.delenv("VERISPEC_LOG_LEVEL", raising=False)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def corpus_dir() -> Path:
    return FIXTURES / "corpus"


@pytest.fixture
def counter_source() -> bytes:
    return (FIXTURES / "counter.v").read_bytes()


@pytest.fixture
def counter_fragments(counter_source):
    return segment(counter_source, default_significant_tokens(counter_source))


@pytest.fixture(scope="session")
def corpus_vocab():
    """A small vocab trained on the fragments of every corpus fixture."""
    texts = []
    for path in sorted((FIXTURES / "corpus").glob("*.v")):
        source = path.read_bytes()
        texts.extend(segment(source, default_significant_tokens(source)).texts)
    return train_bpe(texts, 400)


class VirtualClock:
    """Deterministic clock; advances only when tick() is called."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def tick(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def virtual_clock() -> VirtualClock:
    return VirtualClock()


@pytest.fixture(scope="session")
def corpus_sequences(corpus_vocab):
    """Fragment-encoded corpus fixtures, each terminated by EOS."""
    sequences = []
    for path in sorted((FIXTURES / "corpus").glob("*.v")):
        source = path.read_bytes()
        fc = segment(source, default_significant_tokens(source))
        sequences.append(encode_fragmented(fc, corpus_vocab).ids + [EOS])
    return sequences


@pytest.fixture(scope="session")
def trained_ngram(corpus_sequences, corpus_vocab):
    return train_ngram(corpus_sequences, 3, 4, 0.01, vocab_size=corpus_vocab.size)


def fragment_target(sizes, first_id: int = 65):
    """Token ids for fragments of the given sizes; each fragment ends in FRAG."""
    ids = []
    next_id = first_id
    for size in sizes:
        for _ in range(size - 1):
            ids.append(next_id)
            next_id = first_id + (next_id - first_id + 1) % 150
        ids.append(FRAG)
    return ids


@pytest.fixture
def make_target():
    return fragment_target
