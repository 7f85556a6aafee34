"""
Speculative decoding with multi-head drafts and fragment-boundary truncation.

One decoding step:
    1. Build candidate paths from the top-k base token and the top-k tokens of
       each head, following a static rank tree.
    2. Verify every path against the base model in one tree call and accept
       head tokens while the typical acceptance rule holds.
    3. Keep the longest accepted prefix (lowest candidate index on ties).
    4. Cut that prefix back to its last FRAG so a step never emits a partial
       fragment.

Model calls are the cost unit: decode() issues one step() for the prompt and
one verify_tree() per decoding step.
"""

import abc
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils.artifact_helpers import read_jsonl, write_jsonl
from utils.telemetry_helpers import get_tracer

from .errors import DecodeError
from .tokenizer import EOS, FRAG, SPECIAL_SET, TokenSequence

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

PROB_FLOOR = 1e-12

Clock = Callable[[], float]


class FragmentTruncation(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class AcceptanceParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(0.09, gt=0.0, le=1.0)
    delta: float = Field(0.3, gt=0.0, le=1.0)
    temperature: float = Field(0.0, ge=0.0)
    top_k_per_head: Tuple[int, ...] = (1,)
    max_candidates: int = Field(16, ge=1)
    heads: Optional[int] = Field(None, ge=0)
    fragment_truncation: FragmentTruncation = FragmentTruncation.STRICT
    tree: Optional[Tuple[Tuple[int, ...], ...]] = None

    @field_validator("top_k_per_head")
    @classmethod
    def _check_top_k(cls, value):
        if len(value) < 1 or any(k < 1 for k in value):
            raise ValueError("top_k_per_head needs at least one entry and every k must be >= 1")
        return value

    @field_validator("tree")
    @classmethod
    def _check_tree(cls, value):
        if value is not None and (not value or any(len(path) < 1 or min(path) < 0 for path in value)):
            raise ValueError("tree paths must be nonempty tuples of non-negative ranks")
        return value


@dataclass
class StepOutput:
    base_dist: np.ndarray
    head_dists: np.ndarray

    @property
    def num_heads(self) -> int:
        return int(self.head_dists.shape[0]) if self.head_dists.size else 0


@dataclass
class TreeVerification:
    """Result of one fused verification pass over all candidate paths.

    base_dists[c][j] is the base distribution after context + candidates[c][:j].
    step_at(c, n), when available, returns the step output after
    context + candidates[c][:n] without another model call.
    """

    base_dists: List[np.ndarray]
    calls: int
    step_at: Optional[Callable[[int, int], StepOutput]] = None


@runtime_checkable
class SpeculativeModel(Protocol):
    num_heads: int
    vocab_size: int
    latency_ms: float
    shareable: bool

    def step(self, context: Sequence[int]) -> StepOutput: ...

    def verify(self, context: Sequence[int], proposed: Sequence[int]) -> np.ndarray: ...

    def verify_tree(self, context: Sequence[int], candidates: Sequence[Sequence[int]]) -> TreeVerification: ...


class SpeculativeModelBase(abc.ABC):
    """Shared plumbing for model implementations; verify_tree falls back to one verify per path."""

    num_heads: int = 0
    vocab_size: int = 0
    latency_ms: float = 0.0
    shareable: bool = True

    def _simulate_latency(self) -> None:
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)

    @abc.abstractmethod
    def step(self, context: Sequence[int]) -> StepOutput:
        raise NotImplementedError

    @abc.abstractmethod
    def verify(self, context: Sequence[int], proposed: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def verify_tree(self, context: Sequence[int], candidates: Sequence[Sequence[int]]) -> TreeVerification:
        dists = [np.asarray(self.verify(context, path)) for path in candidates]
        return TreeVerification(dists, calls=len(candidates))


@dataclass
class StopCriteria:
    max_tokens: int
    eos: Optional[int] = EOS

    def __post_init__(self):
        if self.max_tokens < 0:
            raise DecodeError(f"max_tokens must be non-negative, got {self.max_tokens}")


@dataclass
class DecodeStep:
    proposed: List[List[int]]
    accepted_len: int
    emitted: List[int]
    candidate_index: int
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {
            "proposed": self.proposed,
            "accepted_len": self.accepted_len,
            "emitted": self.emitted,
            "candidate_index": self.candidate_index,
            "elapsed": self.elapsed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecodeStep":
        return cls(
            proposed=[list(p) for p in data["proposed"]],
            accepted_len=int(data["accepted_len"]),
            emitted=list(data["emitted"]),
            candidate_index=int(data["candidate_index"]),
            elapsed=float(data.get("elapsed", 0.0)),
        )


@dataclass
class DecodeTrace:
    steps: List[DecodeStep] = field(default_factory=list)
    total_tokens: int = 0
    wall_time: float = 0.0
    model_calls: int = 0

    @property
    def emitted_tokens(self) -> int:
        return sum(len(s.emitted) for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "total_tokens": self.total_tokens,
            "wall_time": self.wall_time,
            "model_calls": self.model_calls,
        }


@dataclass
class DecodeResult:
    output: TokenSequence
    trace: DecodeTrace
    generated: List[int] = field(default_factory=list)


@dataclass
class AcceptResult:
    winner: int
    accepted_len: int
    verification: Optional[TreeVerification] = None


def entropy(dist: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    p = np.asarray(dist, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, PROB_FLOOR))).sum())


def typical_accept(base_dist: np.ndarray, token: int, p: AcceptanceParams) -> bool:
    """Accept iff base_dist[token] > min(epsilon, delta * exp(-entropy(base_dist)))."""
    dist = np.asarray(base_dist, dtype=np.float64)
    if not 0 <= token < dist.shape[-1]:
        raise DecodeError(f"token {token} outside distribution of size {dist.shape[-1]}")
    threshold = min(p.epsilon, p.delta * math.exp(-entropy(dist)))
    return bool(dist[token] > threshold)


def top_k(dist: np.ndarray, k: int) -> List[int]:
    """Highest-probability ids; equal probabilities rank the lower id first."""
    order = np.argsort(-np.asarray(dist), kind="stable")
    return [int(i) for i in order[:k]]


def build_candidate_tree(params: AcceptanceParams, num_heads: int) -> List[Tuple[int, ...]]:
    """
    Static rank table: rank-lexicographic product of per-level top-k ranks,
    clamped to max_candidates. Heads without a configured k use 1.
    """
    if params.tree is not None:
        paths = [tuple(path[: num_heads + 1]) for path in params.tree]
        return list(dict.fromkeys(paths))[: params.max_candidates]
    ks = list(params.top_k_per_head[: num_heads + 1])
    ks += [1] * (num_heads + 1 - len(ks))
    if params.temperature > 0:
        ks[0] = 1
    product = itertools.product(*(range(k) for k in ks))
    return list(itertools.islice(product, params.max_candidates))


def _tempered_sample(dist: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    logp = np.log(np.maximum(np.asarray(dist, dtype=np.float64), PROB_FLOOR)) / temperature
    logp -= logp.max()
    weights = np.exp(logp)
    weights /= weights.sum()
    return int(rng.choice(weights.size, p=weights))


def propose_candidates(
    step_out: StepOutput,
    p: AcceptanceParams,
    heads: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    limit: Optional[int] = None,
) -> List[List[int]]:
    """
    Turn one step output into candidate token paths.

    Args:
        step_out: Base and head distributions at the current position
        p: Acceptance parameters (top-k budget, tree, temperature)
        heads: Heads to use; defaults to p.heads, then every head
        rng: Sampler for the base token when temperature > 0
        limit: Longest allowed path (remaining token budget)

    Returns:
        Distinct paths in rank order; the first token of every path is the
        base proposal
    """
    available = step_out.num_heads
    wanted = heads if heads is not None else p.heads
    H = available if wanted is None else min(wanted, available)
    tree = build_candidate_tree(p, H)

    if p.temperature > 0:
        if rng is None:
            raise DecodeError("sampling at temperature > 0 needs a random generator")
        base_choices = [_tempered_sample(step_out.base_dist, p.temperature, rng)]
    else:
        base_choices = top_k(step_out.base_dist, max(path[0] for path in tree) + 1)

    deepest = max(len(path) for path in tree) - 1
    head_choices = [
        top_k(step_out.head_dists[i], max((path[i + 1] for path in tree if len(path) > i + 1), default=0) + 1)
        for i in range(min(deepest, H))
    ]

    paths: List[Tuple[int, ...]] = []
    for ranks in tree:
        if ranks[0] >= len(base_choices):
            continue
        path = [base_choices[ranks[0]]]
        for level, rank in enumerate(ranks[1:]):
            if rank >= len(head_choices[level]):
                break
            path.append(head_choices[level][rank])
        if limit is not None:
            path = path[:limit]
        paths.append(tuple(path))
    return [list(path) for path in dict.fromkeys(paths)]


def accepted_prefix_length(path: Sequence[int], dists: np.ndarray, p: AcceptanceParams) -> int:
    """The base token always counts; head tokens count while typical acceptance holds."""
    length = 1
    for j in range(1, len(path)):
        if not typical_accept(dists[j], path[j], p):
            break
        length += 1
    return length


def select_longest(candidates: Sequence[Sequence[int]], base_dists: Sequence[np.ndarray], p: AcceptanceParams) -> AcceptResult:
    best_index, best_len = 0, 0
    for index, (path, dists) in enumerate(zip(candidates, base_dists)):
        length = accepted_prefix_length(path, dists, p)
        if length > best_len:
            best_index, best_len = index, length
    return AcceptResult(best_index, best_len)


def verify_and_accept(
    context: Sequence[int], candidates: Sequence[Sequence[int]], model: SpeculativeModel, p: AcceptanceParams
) -> AcceptResult:
    """
    Verify all candidates in one tree call and pick the longest accepted prefix.

    Raises:
        DecodeError: no candidates
    """
    if not candidates:
        raise DecodeError("verify_and_accept needs at least one candidate")
    verification = model.verify_tree(list(context), [list(c) for c in candidates])
    result = select_longest(candidates, verification.base_dists, p)
    result.verification = verification
    return result


def truncate_to_fragment(
    accepted: Sequence[int],
    mode: Union[FragmentTruncation, str] = FragmentTruncation.STRICT,
    frag: int = FRAG,
) -> List[int]:
    """
    Keep the accepted tokens up to and including the last FRAG after the
    first position; without such a FRAG keep only the base token (strict) or
    everything (lenient).
    """
    if not accepted:
        raise DecodeError("cannot truncate an empty accepted prefix")
    accepted = list(accepted)
    for index in range(len(accepted) - 1, 0, -1):
        if accepted[index] == frag:
            return accepted[: index + 1]
    if FragmentTruncation(mode) is FragmentTruncation.LENIENT:
        return accepted
    return accepted[:1]


def _cut_at_eos(tokens: List[int], eos: Optional[int]) -> Tuple[List[int], bool]:
    """
    Drop everything after the first EOS.

    The kept tokens may end in EOS without a FRAG before it: EOS closes the
    output, so its last fragment is complete as emitted and no FRAG is added.
    """
    if eos is not None and eos in tokens:
        return tokens[: tokens.index(eos) + 1], True
    return tokens, False


def _finish(generated: List[int], trace: DecodeTrace, started: float, clock: Clock) -> DecodeResult:
    content = [t for t in generated if t not in SPECIAL_SET]
    trace.total_tokens = len(content)
    trace.wall_time = clock() - started
    return DecodeResult(TokenSequence(content), trace, generated)


def decode(
    model: SpeculativeModel,
    prompt: Union[TokenSequence, Sequence[int]],
    p: AcceptanceParams,
    stop: StopCriteria,
    seed: int = 0,
    clock: Clock = time.perf_counter,
) -> DecodeResult:
    """
    Speculative decoding loop.

    Args:
        model: SpeculativeModel implementation
        prompt: Context ids
        p: Acceptance parameters; p.heads = 0 degenerates to greedy NTP
        stop: max_tokens (mandatory) and eos id
        seed: Seed for base-token sampling when temperature > 0
        clock: Time source for the trace

    Returns:
        DecodeResult with FRAG/EOS-free output ids and the full trace
    """
    context = list(prompt.ids if isinstance(prompt, TokenSequence) else prompt)
    rng = np.random.default_rng(seed)
    trace = DecodeTrace()
    generated: List[int] = []
    started = clock()
    with tracer.start_as_current_span("verispec.decode") as span:
        span.set_attribute("verispec.max_tokens", stop.max_tokens)
        span.set_attribute("verispec.truncation", FragmentTruncation(p.fragment_truncation).value)
        if stop.max_tokens == 0:
            return _finish(generated, trace, started, clock)

        step_out = model.step(context)
        trace.model_calls += 1
        while len(generated) < stop.max_tokens:
            step_started = clock()
            remaining = stop.max_tokens - len(generated)
            candidates = propose_candidates(step_out, p, rng=rng, limit=remaining)
            result = verify_and_accept(context, candidates, model, p)
            verification = result.verification
            trace.model_calls += verification.calls

            accepted = candidates[result.winner][: result.accepted_len]
            emitted = truncate_to_fragment(accepted, p.fragment_truncation)
            emitted, finished = _cut_at_eos(emitted, stop.eos)
            generated.extend(emitted)
            context.extend(emitted)
            trace.steps.append(
                DecodeStep(candidates, result.accepted_len, emitted, result.winner, clock() - step_started)
            )
            if finished or len(generated) >= stop.max_tokens:
                break
            if verification.step_at is not None:
                step_out = verification.step_at(result.winner, len(emitted))
            else:
                step_out = model.step(context)
                trace.model_calls += 1

        span.set_attribute("verispec.steps", len(trace.steps))
        span.set_attribute("verispec.model_calls", trace.model_calls)
        decoded = _finish(generated, trace, started, clock)
    logger.debug(f"Decoded {len(generated)} tokens in {len(trace.steps)} steps ({trace.model_calls} model calls)")
    return decoded


def ntp_decode(
    model: SpeculativeModel,
    prompt: Union[TokenSequence, Sequence[int]],
    temperature: float,
    stop: StopCriteria,
    seed: int = 0,
    clock: Clock = time.perf_counter,
) -> DecodeResult:
    """Next-token-prediction baseline: one step() call and one token per step."""
    if temperature < 0:
        raise DecodeError(f"temperature must be non-negative, got {temperature}")
    context = list(prompt.ids if isinstance(prompt, TokenSequence) else prompt)
    rng = np.random.default_rng(seed)
    trace = DecodeTrace()
    generated: List[int] = []
    started = clock()
    with tracer.start_as_current_span("verispec.ntp_decode") as span:
        while len(generated) < stop.max_tokens:
            step_started = clock()
            step_out = model.step(context)
            trace.model_calls += 1
            if temperature > 0:
                token = _tempered_sample(step_out.base_dist, temperature, rng)
            else:
                token = int(np.argmax(step_out.base_dist))
            generated.append(token)
            context.append(token)
            trace.steps.append(DecodeStep([[token]], 1, [token], 0, clock() - step_started))
            if stop.eos is not None and token == stop.eos:
                break
        span.set_attribute("verispec.steps", len(trace.steps))
        return _finish(generated, trace, started, clock)


def fragment_violations(trace: DecodeTrace, frag: int = FRAG, eos: Optional[int] = EOS) -> List[int]:
    """
    Indices of steps whose emission is longer than one token and does not end in FRAG.

    A step ending in EOS is never a violation, e.g. [x, EOS]; see _cut_at_eos.
    """
    bad = []
    for index, step in enumerate(trace.steps):
        if len(step.emitted) > 1 and step.emitted[-1] != frag and step.emitted[-1] != eos:
            bad.append(index)
    return bad


def write_trace(trace: DecodeTrace, path: Union[str, Path]) -> int:
    """One JSON line per step."""
    return write_jsonl(({"step": i, **s.to_dict()} for i, s in enumerate(trace.steps)), path)


def read_trace(path: Union[str, Path]) -> DecodeTrace:
    steps = [DecodeStep.from_dict(record) for record in read_jsonl(path)]
    emitted = [t for s in steps for t in s.emitted if t not in SPECIAL_SET]
    return DecodeTrace(steps=steps, total_tokens=len(emitted), wall_time=sum(s.elapsed for s in steps))


def acceptance_params_from(data: Optional[Dict] = None, **overrides) -> AcceptanceParams:
    """Build AcceptanceParams from a mapping with keyword overrides on top."""
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return AcceptanceParams(**merged)
