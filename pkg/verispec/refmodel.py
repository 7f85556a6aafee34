"""
Reference implementations of the speculative model contract.

NGramMultiHead is a desk-scale stand-in for a language model with extra
decoding heads: table d maps a context to the frequencies of the token d+1
positions after it. ScriptedMock replays fixed outputs for deterministic
tests, and OracleMock replays a known target so every step can emit a whole
fragment.
"""

import json
import logging
import threading
from collections import Counter, defaultdict, deque
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.artifact_helpers import sha256_file

from .errors import CorpusError, DecodeError, ModelFileError, ScriptExhaustedError
from .labelgen import build_labels_medusa, build_labels_parallel
from .specdec import SpeculativeModelBase, StepOutput, TreeVerification
from .tokenizer import EOS, FIRST_MERGE_ID, FRAG, IGNORE, PAD, TokenSequence

logger = logging.getLogger(__name__)

MODEL_FORMAT = "verispec-ngram/1"

Context = Tuple[int, ...]

# Label construction used to fill the head tables.
LABEL_BUILDERS = {"syntax": build_labels_parallel, "medusa": build_labels_medusa}


def _ids(seq: Union[TokenSequence, Sequence[int]]) -> List[int]:
    return list(seq.ids if isinstance(seq, TokenSequence) else seq)


class NGramMultiHead(SpeculativeModelBase):
    """
    Multi-offset n-gram model with additive smoothing and backoff.

    Lookups try the longest context suffix (n-1 tokens) that has counts and
    back off one token at a time down to the unigram table. When no table
    for that offset has data the distribution is uniform.
    """

    shareable = True

    def __init__(
        self,
        order: int,
        num_heads: int,
        alpha: float,
        vocab_size: int,
        counts: List[Dict[Context, Counter]],
        latency_ms: float = 0.0,
        vocab_fingerprint: Optional[str] = None,
        labels: str = "medusa",
    ):
        self.order = order
        self.num_heads = num_heads
        self.alpha = alpha
        self.vocab_size = vocab_size
        self.counts = counts
        self.latency_ms = latency_ms
        self.vocab_fingerprint = vocab_fingerprint
        self.labels = labels
        self._cache: Dict[Tuple[int, Context], np.ndarray] = {}
        self._lock = threading.Lock()

    def _table_dist(self, offset: int, key: Context) -> Optional[np.ndarray]:
        counter = self.counts[offset].get(key)
        if not counter:
            return None
        vec = np.full(self.vocab_size, self.alpha, dtype=np.float64)
        for token, count in counter.items():
            vec[token] += count
        return vec / vec.sum()

    def distribution(self, offset: int, context: Sequence[int]) -> np.ndarray:
        """P(token at distance offset+1 | context)."""
        longest = min(self.order - 1, len(context))
        for k in range(longest, -1, -1):
            key = tuple(context[len(context) - k:]) if k else ()
            cached = self._cache.get((offset, key))
            if cached is not None:
                return cached
            dist = self._table_dist(offset, key)
            if dist is not None:
                with self._lock:
                    self._cache[(offset, key)] = dist
                return dist
        return np.full(self.vocab_size, 1.0 / self.vocab_size)

    def _step_output(self, context: Sequence[int]) -> StepOutput:
        base = self.distribution(0, context)
        if self.num_heads:
            heads = np.stack([self.distribution(d, context) for d in range(1, self.num_heads + 1)])
        else:
            heads = np.empty((0, self.vocab_size))
        return StepOutput(base, heads)

    def step(self, context: Sequence[int]) -> StepOutput:
        self._simulate_latency()
        return self._step_output(list(context))

    def verify(self, context: Sequence[int], proposed: Sequence[int]) -> np.ndarray:
        self._simulate_latency()
        context = list(context)
        return np.stack([self.distribution(0, context + list(proposed[:j])) for j in range(len(proposed))])

    def verify_tree(self, context: Sequence[int], candidates: Sequence[Sequence[int]]) -> TreeVerification:
        self._simulate_latency()
        context = list(context)
        paths = [list(c) for c in candidates]
        dists = [np.stack([self.distribution(0, context + path[:j]) for j in range(len(path))]) for path in paths]

        def step_at(candidate: int, length: int) -> StepOutput:
            return self._step_output(context + paths[candidate][:length])

        return TreeVerification(dists, calls=1, step_at=step_at)


def train_ngram(
    corpus: Iterable[Union[TokenSequence, Sequence[int]]],
    n: int,
    H: int,
    alpha: float,
    vocab_size: Optional[int] = None,
    latency_ms: float = 0.0,
    vocab_fingerprint: Optional[str] = None,
    labels: str = "medusa",
) -> NGramMultiHead:
    """
    Count offset tables over fragment-encoded sequences.

    Table d is filled from row d of each sequence's label matrix; IGNORE
    and PAD entries are not counted. "medusa" labels count every offset,
    "syntax" labels only count head predictions that finish a fragment.

    Args:
        corpus: Token sequences
        n: Order (context length n-1)
        H: Heads; tables for offsets 0..H are built
        alpha: Additive smoothing constant
        vocab_size: Distribution width; defaults to the largest id seen + 1
            (never below the special-token range)
        labels: "syntax" or "medusa" label construction for the head tables

    Raises:
        DecodeError: invalid order, head count or alpha
        CorpusError: empty corpus
    """
    if n < 1:
        raise DecodeError(f"n-gram order must be at least 1, got {n}")
    if H < 0:
        raise DecodeError(f"head count must be non-negative, got {H}")
    if alpha < 0:
        raise DecodeError(f"alpha must be non-negative, got {alpha}")
    if labels not in LABEL_BUILDERS:
        raise DecodeError(f"unknown label construction {labels!r}; expected one of {sorted(LABEL_BUILDERS)}")
    sequences = [_ids(seq) for seq in corpus]
    if not any(sequences):
        raise CorpusError("cannot train an n-gram model on an empty corpus")

    counts: List[Dict[Context, Counter]] = [defaultdict(Counter) for _ in range(H + 1)]
    build = LABEL_BUILDERS[labels]
    for seq in sequences:
        if not seq:
            continue
        rows = build(seq, H).rows.tolist() if H else [seq]
        for t in range(len(seq)):
            contexts = [tuple(seq[t - k:t]) for k in range(min(n - 1, t) + 1)]
            for d in range(H + 1):
                target = rows[d][t]
                if target == IGNORE or target == PAD:
                    continue
                for context in contexts:
                    counts[d][context][target] += 1

    max_id = max(max(seq) for seq in sequences if seq)
    size = vocab_size if vocab_size is not None else max(max_id + 1, FIRST_MERGE_ID)
    if max_id >= size:
        raise DecodeError(f"token id {max_id} does not fit vocab_size {size}")
    model = NGramMultiHead(n, H, alpha, size, [dict(c) for c in counts], latency_ms, vocab_fingerprint, labels)
    logger.info(f"✅ Trained {n}-gram model with {H} heads ({labels} labels) on {len(sequences)} sequences")
    return model


def save_model(model: NGramMultiHead, path: Union[str, Path]) -> Path:
    """
    Write a JSON header line followed by an .npy table.

    Table rows are (offset, context length, context ids padded with -1,
    token, count), sorted so equal models give equal files.
    """
    width = max(model.order - 1, 0)
    rows = []
    for offset, table in enumerate(model.counts):
        for context, counter in table.items():
            padded = list(context) + [-1] * (width - len(context))
            for token, count in counter.items():
                rows.append((offset, len(context), *padded, token, count))
    rows.sort()
    array = np.asarray(rows, dtype=np.int64).reshape(len(rows), width + 4)
    header = {
        "format": MODEL_FORMAT,
        "n": model.order,
        "H": model.num_heads,
        "alpha": model.alpha,
        "vocab_size": model.vocab_size,
        "vocab_fingerprint": model.vocab_fingerprint,
        "labels": model.labels,
        "rows": len(rows),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        np.save(f, array, allow_pickle=False)
    logger.info(f"✅ Model saved to {path} ({len(rows)} table rows)")
    return path


def load_model(path: Union[str, Path], latency_ms: float = 0.0) -> NGramMultiHead:
    try:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            array = np.load(f, allow_pickle=False)
    except FileNotFoundError as e:
        raise ModelFileError(f"model file not found: {path}") from e
    except (ValueError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path} is not a readable model file: {e}") from e
    if header.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{path} is not a {MODEL_FORMAT} file")

    n, H = header["n"], header["H"]
    width = max(n - 1, 0)
    counts: List[Dict[Context, Counter]] = [defaultdict(Counter) for _ in range(H + 1)]
    for row in array.tolist():
        offset, k = row[0], row[1]
        context = tuple(row[2:2 + k])
        counts[offset][context][row[2 + width]] += row[3 + width]
    return NGramMultiHead(
        n,
        H,
        header["alpha"],
        header["vocab_size"],
        [dict(c) for c in counts],
        latency_ms,
        header.get("vocab_fingerprint"),
        header.get("labels", "medusa"),
    )


def model_fingerprint(path: Union[str, Path]) -> str:
    return sha256_file(path)


class ScriptedMock(SpeculativeModelBase):
    """Replays queued step outputs and verify responses; running out raises."""

    shareable = False

    def __init__(
        self,
        steps: Sequence[StepOutput],
        verifies: Sequence[Sequence[Sequence[float]]] = (),
        latency_ms: float = 0.0,
    ):
        self._steps = deque(steps)
        self._verifies = deque(np.asarray(v, dtype=np.float64) for v in verifies)
        first = steps[0] if steps else None
        self.num_heads = first.num_heads if first is not None else 0
        self.vocab_size = int(first.base_dist.shape[-1]) if first is not None else 0
        self.latency_ms = latency_ms
        self.calls = 0

    def step(self, context: Sequence[int]) -> StepOutput:
        self._simulate_latency()
        self.calls += 1
        if not self._steps:
            raise ScriptExhaustedError(f"step script exhausted after {self.calls - 1} calls")
        return self._steps.popleft()

    def verify(self, context: Sequence[int], proposed: Sequence[int]) -> np.ndarray:
        self._simulate_latency()
        self.calls += 1
        if not self._verifies:
            raise ScriptExhaustedError(f"verify script exhausted after {self.calls - 1} calls")
        dists = self._verifies.popleft()
        if len(dists) < len(proposed):
            raise DecodeError(f"scripted verify holds {len(dists)} rows for a {len(proposed)}-token path")
        return dists[: len(proposed)]


class OracleMock(SpeculativeModelBase):
    """
    Replays a target sequence. The base proposes the next target token; head
    i proposes target[t+i] while no FRAG lies in target[t..t+i-1], otherwise
    EOS. Verification is one-hot on the target (EOS past its end).
    """

    shareable = True

    def __init__(
        self,
        target: Sequence[int],
        vocab_size: int,
        num_heads: int = 10,
        prompt_len: int = 0,
        latency_ms: float = 0.0,
        frag: int = FRAG,
        eos: int = EOS,
    ):
        self.target = list(target)
        self.vocab_size = vocab_size
        self.num_heads = num_heads
        self.prompt_len = prompt_len
        self.latency_ms = latency_ms
        self.frag = frag
        self.eos = eos
        if self.target and max(self.target) >= vocab_size:
            raise DecodeError(f"target id {max(self.target)} does not fit vocab_size {vocab_size}")

    def _one_hot(self, token: int) -> np.ndarray:
        vec = np.zeros(self.vocab_size)
        vec[token] = 1.0
        return vec

    def _target_at(self, position: int) -> int:
        return self.target[position] if 0 <= position < len(self.target) else self.eos

    def _output_at(self, position: int) -> StepOutput:
        heads = []
        for i in range(1, self.num_heads + 1):
            window = self.target[position:position + i]
            if len(window) == i and self.frag not in window:
                heads.append(self._one_hot(self._target_at(position + i)))
            else:
                heads.append(self._one_hot(self.eos))
        stacked = np.stack(heads) if heads else np.empty((0, self.vocab_size))
        return StepOutput(self._one_hot(self._target_at(position)), stacked)

    def step(self, context: Sequence[int]) -> StepOutput:
        self._simulate_latency()
        return self._output_at(len(context) - self.prompt_len)

    def verify(self, context: Sequence[int], proposed: Sequence[int]) -> np.ndarray:
        self._simulate_latency()
        position = len(context) - self.prompt_len
        return np.stack([self._one_hot(self._target_at(position + j)) for j in range(len(proposed))])

    def verify_tree(self, context: Sequence[int], candidates: Sequence[Sequence[int]]) -> TreeVerification:
        self._simulate_latency()
        position = len(context) - self.prompt_len
        dists = [
            np.stack([self._one_hot(self._target_at(position + j)) for j in range(len(path))]) for path in candidates
        ]
        return TreeVerification(dists, calls=1, step_at=lambda _candidate, length: self._output_at(position + length))


def oracle_mock(
    target: Union[TokenSequence, Sequence[int]],
    vocab_size: Optional[int] = None,
    num_heads: int = 10,
    prompt_len: int = 0,
    latency_ms: float = 0.0,
) -> OracleMock:
    ids = _ids(target)
    size = vocab_size if vocab_size is not None else max([FIRST_MERGE_ID] + [i + 1 for i in ids])
    return OracleMock(ids, size, num_heads=num_heads, prompt_len=prompt_len, latency_ms=latency_ms)
