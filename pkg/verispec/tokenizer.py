"""
Byte-level BPE tokenizer with reserved special tokens.

Ids 0-255 are the raw bytes, 256-260 the specials (FRAG, PAD, IGNORE, BOS,
EOS) and merged tokens start at 261. Fragment-aware encoding runs BPE inside
each fragment independently and appends one FRAG id per fragment, so no
subword ever spans a fragment boundary.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from utils.artifact_helpers import canonical_json, load_json, save_json, sha256_bytes

from .errors import VocabError
from .verilog_syntax import FragmentedCode

logger = logging.getLogger(__name__)

FRAG = 256
PAD = 257
IGNORE = 258
BOS = 259
EOS = 260
SPECIAL_IDS: Dict[str, int] = {"FRAG": FRAG, "PAD": PAD, "IGNORE": IGNORE, "BOS": BOS, "EOS": EOS}
SPECIAL_SET = frozenset(SPECIAL_IDS.values())
BYTE_ALPHABET = 256
FIRST_MERGE_ID = BYTE_ALPHABET + len(SPECIAL_IDS)
VOCAB_FORMAT = "verispec-vocab/1"
# Distinct byte strings memoised per vocab
ENCODE_CACHE_SIZE = 65536

Pair = Tuple[int, int]


@dataclass(frozen=True)
class Vocab:
    """Immutable BPE vocabulary: ordered merges plus the id to bytes table."""

    merges: Tuple[Pair, ...]
    token_bytes: Tuple[bytes, ...]
    _ranks: Dict[Pair, int] = field(init=False, compare=False, repr=False)
    _encode: Callable[[bytes], Tuple[int, ...]] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_ranks", {pair: rank for rank, pair in enumerate(self.merges)})
        object.__setattr__(self, "_encode", lru_cache(maxsize=ENCODE_CACHE_SIZE)(self._apply_merges))

    @classmethod
    def from_merges(cls, merges: Sequence[Pair]) -> "Vocab":
        table: List[bytes] = [bytes([b]) for b in range(BYTE_ALPHABET)] + [b""] * len(SPECIAL_IDS)
        for index, (left, right) in enumerate(merges):
            new_id = FIRST_MERGE_ID + index
            if not (0 <= left < new_id and 0 <= right < new_id) or left in SPECIAL_SET or right in SPECIAL_SET:
                raise VocabError(f"merge {index} refers to an invalid id pair ({left}, {right})")
            table.append(table[left] + table[right])
        return cls(tuple((int(a), int(b)) for a, b in merges), tuple(table))

    @property
    def size(self) -> int:
        return len(self.token_bytes)

    @property
    def specials(self) -> Dict[str, int]:
        return dict(SPECIAL_IDS)

    def rank(self, pair: Pair) -> Optional[int]:
        return self._ranks.get(pair)

    def _apply_merges(self, text: bytes) -> Tuple[int, ...]:
        ids = list(text)
        while len(ids) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(ids, ids[1:]):
                rank = self.rank(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, pair
            if best_pair is None:
                break
            ids = _merge_pair(ids, best_pair, FIRST_MERGE_ID + best_rank)
        return tuple(ids)

    def encode_cache_info(self):
        return self._encode.cache_info()

    def fingerprint(self) -> str:
        return sha256_bytes(canonical_json({"format": VOCAB_FORMAT, "merges": self.merges}).encode())

    def to_dict(self) -> dict:
        return {
            "format": VOCAB_FORMAT,
            "vocab_size": self.size,
            "specials": self.specials,
            "merges": [list(m) for m in self.merges],
        }


@dataclass
class TokenSequence:
    ids: List[int]
    provenance: Optional[List[int]] = None

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, index):
        return self.ids[index]

    def count(self, token_id: int) -> int:
        return self.ids.count(token_id)


def _merge_pair(ids: Sequence[int], pair: Pair, new_id: int) -> List[int]:
    out: List[int] = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def train_bpe(corpus: Iterable[bytes], vocab_size: int) -> Vocab:
    """
    Train a byte-level BPE vocabulary.

    Args:
        corpus: Byte strings; pairs never cross item boundaries
        vocab_size: Target size including the 256 bytes and 5 specials

    Returns:
        Vocab with at most vocab_size - 261 merges

    Raises:
        VocabError: empty corpus or vocab_size below 261
    """
    if vocab_size < FIRST_MERGE_ID:
        raise VocabError(f"vocab_size must be at least {FIRST_MERGE_ID}, got {vocab_size}")
    words = Counter(bytes(item) for item in corpus)
    words.pop(b"", None)
    if not words:
        raise VocabError("cannot train a vocabulary on an empty corpus")

    # Distinct strings in first-seen order keep the run deterministic.
    sequences: List[List[int]] = [list(w) for w in words]
    weights: List[int] = [words[w] for w in words]
    merges: List[Pair] = []
    target = vocab_size - FIRST_MERGE_ID

    while len(merges) < target:
        pair_counts: Counter = Counter()
        for seq, weight in zip(sequences, weights):
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] += weight
        if not pair_counts:
            logger.warning(f"⚠️ No pairs left after {len(merges)} merges; vocab stops at {FIRST_MERGE_ID + len(merges)}")
            break
        best = min(pair_counts.items(), key=lambda item: (-item[1], item[0]))[0]
        new_id = FIRST_MERGE_ID + len(merges)
        merges.append(best)
        sequences = [_merge_pair(seq, best, new_id) if len(seq) > 1 else seq for seq in sequences]

    vocab = Vocab.from_merges(merges)
    logger.info(f"✅ Trained BPE vocab: {len(merges)} merges, size {vocab.size}")
    return vocab


def _encode_bytes(text: bytes, v: Vocab) -> Tuple[int, ...]:
    return v._encode(text)


def encode(text: Union[bytes, str], v: Vocab) -> TokenSequence:
    """Apply the merges of `v` in training order; decode(encode(x)) == x."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return TokenSequence(list(_encode_bytes(text, v)))


def encode_fragmented(fc: FragmentedCode, v: Vocab) -> TokenSequence:
    """
    Encode each fragment on its own and follow it with one FRAG id.

    Provenance maps every id (FRAG included) to the index of its fragment.
    """
    ids: List[int] = []
    provenance: List[int] = []
    for index, fragment in enumerate(fc.fragments):
        piece = _encode_bytes(fragment.text, v)
        ids.extend(piece)
        ids.append(FRAG)
        provenance.extend([index] * (len(piece) + 1))
    return TokenSequence(ids, provenance)


def decode(ids: Union[TokenSequence, Sequence[int]], v: Vocab) -> bytes:
    table = v.token_bytes
    try:
        return b"".join(table[i] for i in ids)
    except (IndexError, TypeError) as e:
        raise VocabError(f"token id outside vocabulary of size {v.size}") from e


def strip_specials(ids: Iterable[int]) -> List[int]:
    return [i for i in ids if i not in SPECIAL_SET]


def save_vocab(v: Vocab, path: Union[str, Path]) -> Path:
    path = save_json(v.to_dict(), path)
    logger.info(f"✅ Vocab saved to {path} (fingerprint {v.fingerprint()[:12]})")
    return path


def load_vocab(path: Union[str, Path]) -> Vocab:
    """
    Load a vocab file written by save_vocab.

    Raises:
        VocabError: missing file, wrong format tag, mismatched specials or a
            corrupt merge table
    """
    try:
        data = load_json(path)
    except FileNotFoundError as e:
        raise VocabError(f"vocab file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise VocabError(f"vocab file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict) or data.get("format") != VOCAB_FORMAT:
        raise VocabError(f"{path} is not a {VOCAB_FORMAT} file")
    if data.get("specials") != SPECIAL_IDS:
        raise VocabError(f"{path} declares special ids {data.get('specials')}, expected {SPECIAL_IDS}")
    vocab = Vocab.from_merges([tuple(m) for m in data.get("merges", [])])
    if data.get("vocab_size", vocab.size) != vocab.size:
        raise VocabError(f"{path} declares vocab_size {data['vocab_size']} but has {vocab.size} entries")
    return vocab
