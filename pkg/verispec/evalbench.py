"""
Evaluation metrics and the benchmark harness.

Metrics: generation speed (output tokens over inference time, averaged per
run), speedup against NTP, unbiased pass@k, pass rate and mean accepted
length per decoding step. run_benchmark decodes every prompt with every
method at every configured temperature, checks the outputs and aggregates
one report row per (method, temperature).
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from utils.artifact_helpers import read_jsonl, save_json
from utils.telemetry_helpers import get_tracer

from .errors import EvaluationError
from .specdec import (
    AcceptanceParams,
    Clock,
    DecodeResult,
    DecodeTrace,
    FragmentTruncation,
    SpeculativeModel,
    StopCriteria,
    decode,
    ntp_decode,
)
from .tokenizer import Vocab, decode as detokenize, encode_fragmented
from .verilog_syntax import default_significant_tokens, segment, syntax_check

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

METHOD_OURS = "ours"
METHOD_MEDUSA = "medusa"
METHOD_NTP = "ntp"
METHODS = (METHOD_OURS, METHOD_MEDUSA, METHOD_NTP)

ModelSource = Union[SpeculativeModel, Callable[[], SpeculativeModel]]


class BenchParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    methods: Tuple[str, ...] = METHODS
    temperatures: Tuple[float, ...] = (0.0,)
    samples_per_prompt: int = Field(20, ge=1)
    ks: Tuple[int, ...] = (1, 5, 10)
    max_tokens: int = Field(256, ge=0)
    seed: int = 0
    workers: int = Field(1, ge=1)
    checker_command: Optional[str] = None
    checker_timeout: float = Field(30.0, gt=0.0)


@dataclass
class Prompt:
    id: str
    instruction: str = ""
    prefix: str = ""
    testbench: Optional[str] = None


@dataclass
class RunRecord:
    prompt_id: str
    method: str
    output_text: str
    trace: DecodeTrace
    syntax_ok: bool
    functional_ok: Optional[bool] = None
    temperature: float = 0.0
    sample: int = 0
    reason: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.functional_ok if self.functional_ok is not None else self.syntax_ok


@dataclass
class MethodMetrics:
    method: str
    temperature: float
    runs: int
    speed: float
    speedup: Optional[float]
    mean_accepted_len: float
    pass_at_k: Dict[int, float]
    pass_rate: float
    syntax_pass_rate: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "temperature": self.temperature,
            "runs": self.runs,
            "speed_tokens_per_s": self.speed,
            "speedup": self.speedup,
            "mean_accepted_len": self.mean_accepted_len,
            **{f"pass@{k}": v for k, v in sorted(self.pass_at_k.items())},
            "pass_rate": self.pass_rate,
            "syntax_pass_rate": self.syntax_pass_rate,
        }


@dataclass
class MetricReport:
    rows: List[MethodMetrics]
    config: dict = field(default_factory=dict)
    runs: List[RunRecord] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def row(self, method: str, temperature: float = 0.0) -> MethodMetrics:
        for r in self.rows:
            if r.method == method and r.temperature == temperature:
                return r
        raise KeyError(f"no report row for {method} at temperature {temperature}")

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "config": self.config, "notes": self.notes}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows])


def speed(runs: Sequence[RunRecord]) -> float:
    """
    Mean over runs of output tokens divided by inference time.

    A run that emitted nothing counts as rate 0 whatever its time.
    """
    if not runs:
        raise EvaluationError("speed is undefined for an empty run list")
    rates = []
    for run in runs:
        if run.trace.total_tokens == 0:
            rates.append(0.0)
            continue
        if run.trace.wall_time <= 0:
            raise EvaluationError(f"run {run.prompt_id}/{run.sample} has non-positive inference time")
        rates.append(run.trace.total_tokens / run.trace.wall_time)
    return float(np.mean(rates))


def speedup(method_speed: float, ntp_speed: float) -> float:
    if ntp_speed <= 0:
        raise EvaluationError(f"NTP speed must be positive, got {ntp_speed}")
    return method_speed / ntp_speed


def pass_at_k(n: int, c: int, k: int) -> float:
    """
    Unbiased pass@k = 1 - C(n-c, k) / C(n, k).

    The ratio is the exact product of (n-c-i)/(n-i) for i < k, so pass@1 is
    exactly c/n and nothing overflows for large n.

    Raises:
        EvaluationError: unless 0 <= c <= n and 1 <= k <= n
    """
    if not 0 <= c <= n:
        raise EvaluationError(f"need 0 <= c <= n, got n={n} c={c}")
    if not 1 <= k <= n:
        raise EvaluationError(f"need 1 <= k <= n, got n={n} k={k}")
    if n - c < k:
        return 1.0
    ratio = Fraction(1)
    for i in range(k):
        ratio *= Fraction(n - c - i, n - i)
    return float(1 - ratio)


def pass_rate(m: int, benchmark_size: int) -> float:
    if benchmark_size <= 0:
        raise EvaluationError(f"benchmark size must be positive, got {benchmark_size}")
    if not 0 <= m <= benchmark_size:
        raise EvaluationError(f"need 0 <= m <= {benchmark_size}, got {m}")
    return m / benchmark_size


def mean_accepted_length(trace: DecodeTrace) -> float:
    """Emitted tokens (FRAG included) per decoding step."""
    if not trace.steps:
        raise EvaluationError("mean accepted length is undefined for an empty trace")
    return trace.emitted_tokens / len(trace.steps)


def syntax_pass_rate(runs: Sequence[RunRecord]) -> float:
    if not runs:
        raise EvaluationError("syntax pass rate is undefined for an empty run list")
    return sum(1 for r in runs if r.syntax_ok) / len(runs)


def load_prompts(path: Union[str, Path]) -> List[Prompt]:
    """Prompts file: JSON lines {id, instruction, optional prefix, optional testbench}."""
    try:
        records = read_jsonl(path)
    except FileNotFoundError as e:
        raise EvaluationError(f"prompts file not found: {path}") from e
    prompts = []
    for index, record in enumerate(records):
        if "id" not in record:
            raise EvaluationError(f"prompt {index} in {path} has no id")
        prompts.append(
            Prompt(
                id=str(record["id"]),
                instruction=record.get("instruction", ""),
                prefix=record.get("prefix", ""),
                testbench=record.get("testbench"),
            )
        )
    return prompts


def encode_prompt(prompt: Prompt, vocab: Vocab) -> List[int]:
    """Fragment-encode the code prefix; the instruction text is not model input."""
    if not prompt.prefix:
        return []
    source = prompt.prefix.encode("utf-8")
    return encode_fragmented(segment(source, default_significant_tokens(source)), vocab).ids


@dataclass(frozen=True)
class _Job:
    method_index: int
    temperature_index: int
    prompt_index: int
    sample: int


def _job_seed(base_seed: int, job: _Job) -> int:
    sequence = np.random.SeedSequence([base_seed, job.method_index, job.temperature_index, job.prompt_index, job.sample])
    return int(sequence.generate_state(1)[0])


def _resolve_model(source: ModelSource) -> SpeculativeModel:
    if callable(source) and not hasattr(source, "step"):
        return source()
    return source


def _run_decode(
    method: str, model: SpeculativeModel, prompt_ids: List[int], acceptance: AcceptanceParams,
    temperature: float, stop: StopCriteria, seed: int, clock: Clock,
) -> DecodeResult:
    if method == METHOD_NTP:
        return ntp_decode(model, prompt_ids, temperature, stop, seed=seed, clock=clock)
    truncation = FragmentTruncation.STRICT if method == METHOD_OURS else FragmentTruncation.LENIENT
    params = acceptance.model_copy(update={"temperature": temperature, "fragment_truncation": truncation})
    return decode(model, prompt_ids, params, stop, seed=seed, clock=clock)


def run_benchmark(
    models: Mapping[str, ModelSource],
    prompts: Sequence[Prompt],
    params: BenchParams,
    acceptance: AcceptanceParams,
    vocab: Vocab,
    checker=None,
    clock: Clock = time.perf_counter,
) -> MetricReport:
    """
    Decode every prompt with every method, temperature and sample, then aggregate.

    Args:
        models: Method tag to model, or to a zero-argument factory giving a
            fresh model per job
        prompts: Benchmark prompts
        params: Methods, temperatures, samples, ks, token budget, workers
        acceptance: Base acceptance parameters for the speculative methods
        vocab: Used to encode prompt prefixes and detokenize outputs
        checker: Optional FunctionalChecker; used for prompts with a testbench
        clock: Time source passed to every decode

    Raises:
        EvaluationError: no prompts, unknown method or a method without a model
    """
    if not prompts:
        raise EvaluationError("benchmark needs at least one prompt")
    for method in params.methods:
        if method not in METHODS:
            raise EvaluationError(f"unknown method {method!r}; expected one of {METHODS}")
        if method not in models:
            raise EvaluationError(f"no model supplied for method {method!r}")

    stop = StopCriteria(max_tokens=params.max_tokens)
    encoded = [encode_prompt(p, vocab) for p in prompts]
    jobs = [
        _Job(m, t, p, s)
        for m in range(len(params.methods))
        for t in range(len(params.temperatures))
        for p in range(len(prompts))
        for s in range(params.samples_per_prompt)
    ]

    def run_job(job: _Job) -> RunRecord:
        method = params.methods[job.method_index]
        temperature = params.temperatures[job.temperature_index]
        prompt = prompts[job.prompt_index]
        model = _resolve_model(models[method])
        with tracer.start_as_current_span("verispec.bench_job") as span:
            span.set_attribute("verispec.method", method)
            span.set_attribute("verispec.prompt", prompt.id)
            result = _run_decode(
                method, model, encoded[job.prompt_index], acceptance, temperature, stop, _job_seed(params.seed, job), clock
            )
            text = prompt.prefix + detokenize(result.output, vocab).decode("utf-8", errors="replace")
            syntax_ok = syntax_check(text.encode("utf-8")).ok
            functional_ok, reason = None, None
            if checker is not None and prompt.testbench:
                outcome = checker.check(text, prompt.testbench, prompt.id)
                functional_ok, reason = outcome.ok, outcome.reason
            span.set_attribute("verispec.syntax_ok", syntax_ok)
        return RunRecord(prompt.id, method, text, result.trace, syntax_ok, functional_ok, temperature, job.sample, reason)

    # Models that are neither shareable nor built per job run one job at a time.
    safe = {m: _is_parallel_safe(models[m]) for m in params.methods}
    parallel = [j for j in jobs if safe[params.methods[j.method_index]]]
    sequential = [j for j in jobs if not safe[params.methods[j.method_index]]]
    results: Dict[_Job, RunRecord] = {}
    with ThreadPoolExecutor(max_workers=params.workers) as pool:
        for job, record in zip(parallel, pool.map(run_job, parallel)):
            results[job] = record
    for job in sequential:
        results[job] = run_job(job)
    runs = [results[job] for job in jobs]

    notes: List[str] = []
    rows = _aggregate(runs, prompts, params, notes)
    logger.info(f"✅ Benchmark finished: {len(runs)} runs over {len(prompts)} prompts")
    config = {"bench": params.model_dump(), "acceptance": acceptance.model_dump(mode="json")}
    return MetricReport(rows, config, runs, notes)


def _is_parallel_safe(source: ModelSource) -> bool:
    if callable(source) and not hasattr(source, "step"):
        return True
    return bool(getattr(source, "shareable", False))


def _aggregate(
    runs: List[RunRecord], prompts: Sequence[Prompt], params: BenchParams, notes: List[str]
) -> List[MethodMetrics]:
    groups: Dict[Tuple[str, float], List[RunRecord]] = {}
    for run in runs:
        groups.setdefault((run.method, run.temperature), []).append(run)

    speeds = {key: speed(group) for key, group in groups.items()}
    for (method, temperature), value in speeds.items():
        if method == METHOD_NTP and value <= 0:
            note = f"NTP emitted no tokens at temperature {temperature}; speedup is undefined"
            logger.warning(f"⚠️ {note}")
            notes.append(note)
    rows = []
    for (method, temperature), group in groups.items():
        ntp_speed = speeds.get((METHOD_NTP, temperature), 0.0)
        ratio = speedup(speeds[(method, temperature)], ntp_speed) if ntp_speed > 0 else None

        per_prompt: Dict[str, List[RunRecord]] = {}
        for run in group:
            per_prompt.setdefault(run.prompt_id, []).append(run)
        pass_k = {}
        for k in params.ks:
            scores = [
                pass_at_k(len(samples), sum(r.passed for r in samples), k)
                for samples in per_prompt.values()
                if k <= len(samples)
            ]
            if scores:
                pass_k[k] = float(np.mean(scores))
        solved = sum(1 for samples in per_prompt.values() if any(r.passed for r in samples))
        accepted = [mean_accepted_length(r.trace) for r in group if r.trace.steps]
        rows.append(
            MethodMetrics(
                method=method,
                temperature=temperature,
                runs=len(group),
                speed=speeds[(method, temperature)],
                speedup=ratio,
                mean_accepted_len=float(np.mean(accepted)) if accepted else 0.0,
                pass_at_k=pass_k,
                pass_rate=pass_rate(solved, len(prompts)),
                syntax_pass_rate=syntax_pass_rate(group),
            )
        )
    return rows


def write_report(report: MetricReport, json_path: Union[str, Path], csv_path: Optional[Union[str, Path]] = None) -> None:
    save_json(report.to_dict(), json_path)
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        report.to_frame().to_csv(csv_path, index=False, float_format="%.6f")
    logger.info(f"✅ Report written to {json_path}" + (f" and {csv_path}" if csv_path else ""))
