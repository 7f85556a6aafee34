"""
Command-line entry point for verispec.

Subcommands:
    corpus      build the training dataset from a directory of .v files
    tokenize    train a BPE vocab or encode a file with [FRAG] markers
    labels      build/inspect syntax-enriched label matrices
    train-ref   train the n-gram multi-head reference model
    decode      speculative or NTP decoding with a trained model or an oracle
    bench       run the benchmark harness and write the report
    syntax      syntax-check files, optionally dumping AST/fragments

Exit codes: 0 ok, 1 usage, 2 data error, 3 external tool failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from utils.config_helpers import load_environment, resolve_log_level, setup_logging
from utils.telemetry_helpers import setup_console_tracing, shutdown_tracing

from .config import Config, load_config
from .corpus import ingest_directory, load_dataset, run_pipeline
from .errors import CheckerError, CorpusError, LabelError, LexError, VerispecError
from .evalbench import METHOD_MEDUSA, METHODS, Prompt, encode_prompt, load_prompts, run_benchmark, write_report
from .labelgen import (
    build_labels_naive,
    build_labels_parallel,
    label_statistics,
    save_labels_binary,
    save_labels_json,
)
from .refmodel import load_model, model_fingerprint, oracle_mock, save_model, train_ngram
from .specdec import StopCriteria, decode, fragment_violations, ntp_decode, write_trace
from .tokenizer import EOS, FRAG, decode as detokenize, encode_fragmented, load_vocab, save_vocab, train_bpe
from .verilog_syntax import default_significant_tokens, dump_ast, dump_fragments, segment, syntax_check

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TOOL = 3


class CliUsageError(Exception):
    """A flag combination the parser cannot express."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file (default: $VERISPEC_CONFIG)")
    common.add_argument("--seed", type=int, help="Seed for every random choice in the run")
    common.add_argument("--workers", type=_positive_int, help="Worker threads for parallel stages")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: $VERISPEC_LOG_LEVEL or INFO)")
    common.add_argument("--otel-console", action="store_true", help="Print OpenTelemetry spans to stdout")

    parser = CliParser(prog="verispec", description="Syntax-aligned speculative decoding toolkit for Verilog")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", parents=[common], help="Build the training dataset from .v files")
    p.add_argument("--input", dest="corpus_dir", help="Directory of .v files and archives")
    p.add_argument("--output", dest="dataset", help="Dataset JSONL path")
    p.add_argument("--report", dest="stage_report", help="Stage report JSON path (default: next to the dataset)")
    p.add_argument("--vocab", help="Vocab path: loaded when it exists, otherwise trained and written there")
    p.add_argument("--vocab-size", type=int, help="Vocab size when a vocab is trained")
    p.add_argument("--shingle-k", type=_positive_int)
    p.add_argument("--num-hashes", type=_positive_int)
    p.add_argument("--threshold", type=float, help="Near-duplicate Jaccard threshold")
    p.add_argument("--comment-ratio", type=float, help="Maximum comment-byte fraction")
    p.add_argument("--minhash-seed", type=int)
    p.set_defaults(handler=cmd_corpus)

    p = sub.add_parser("tokenize", parents=[common], help="Train a vocab or encode a file")
    p.add_argument("action", choices=["train", "encode"])
    p.add_argument("--input", dest="corpus_dir", help="train: directory of .v files")
    p.add_argument("--vocab", help="Vocab path (written by train, read by encode)")
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--file", help="encode: Verilog file to encode")
    p.add_argument("--show-frag", action="store_true", help="encode: print ids per fragment")
    p.set_defaults(handler=cmd_tokenize)

    p = sub.add_parser("labels", parents=[common], help="Build syntax-enriched label matrices")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--ids", type=_int_list, help="Comma-separated token ids (256 is FRAG)")
    source.add_argument("--file", help="Verilog file, fragment-encoded with --vocab")
    source.add_argument("--dataset", help="Dataset JSONL; every record is processed")
    p.add_argument("--vocab", help="Vocab for --file")
    p.add_argument("--heads", dest="label_heads", type=_positive_int, help="Number of heads H (>= 1)")
    p.add_argument("--check", action="store_true", help="Compare the parallel builder against the naive one")
    p.add_argument("--stats", action="store_true", help="Print per-row IGNORE/PAD fractions")
    p.add_argument("--output", help="Write the (first) matrix here")
    p.add_argument("--format", choices=["json", "binary"], default="json")
    p.set_defaults(handler=cmd_labels)

    p = sub.add_parser("train-ref", parents=[common], help="Train the n-gram multi-head reference model")
    p.add_argument("--dataset", help="Dataset JSONL")
    p.add_argument("--vocab", help="Vocab recorded in the model header")
    p.add_argument("--output", dest="model", help="Model path")
    p.add_argument("--n", type=_positive_int, help="n-gram order")
    p.add_argument("--heads", dest="ref_heads", type=_non_negative_int)
    p.add_argument("--alpha", type=float)
    p.add_argument(
        "--labels", dest="ref_labels", choices=["syntax", "medusa"], help="Label construction for the head tables"
    )
    p.add_argument("--medusa-output", dest="medusa_model", help="Also train a medusa-labelled baseline model here")
    p.set_defaults(handler=cmd_train_ref)

    p = sub.add_parser("decode", parents=[common], help="Decode with a trained model or an oracle")
    p.add_argument("--mode", choices=["spec", "ntp"], default="spec")
    p.add_argument("--model", help="Trained model path")
    p.add_argument("--oracle-target", help="Verilog file replayed by an oracle model instead of --model")
    p.add_argument("--vocab", help="Vocab path")
    p.add_argument("--prompt", default="", help="Code prefix to continue")
    p.add_argument("--max-tokens", type=_non_negative_int)
    p.add_argument("--heads", dest="spec_heads", type=_non_negative_int, help="Heads used for drafting (0 = none)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--top-k", type=_int_list, help="Per-level top-k, base first, e.g. 2,2,1")
    p.add_argument("--max-candidates", type=_positive_int)
    p.add_argument("--truncation", choices=["strict", "lenient"])
    p.add_argument("--latency-ms", type=float, help="Artificial delay per model call")
    p.add_argument("--trace", help="Write the decode trace as JSON lines")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("bench", parents=[common], help="Run the benchmark harness")
    p.add_argument("--model", help="Trained model path")
    p.add_argument("--medusa-model", dest="medusa_model", help="Medusa-labelled model for the medusa method")
    p.add_argument("--vocab", help="Vocab path")
    p.add_argument("--prompts", help="Prompts JSONL")
    p.add_argument("--report", help="Report JSON path")
    p.add_argument("--csv", help="Report CSV path (default: report path with .csv)")
    p.add_argument("--methods", type=_str_list, help=f"Comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--temperatures", type=_float_list)
    p.add_argument("--samples", type=_positive_int, help="Samples per prompt")
    p.add_argument("--ks", type=_int_list, help="pass@k values")
    p.add_argument("--max-tokens", type=_non_negative_int)
    p.add_argument("--latency-ms", type=float)
    p.add_argument("--checker-cmd", help="jinja2 command template for functional checking")
    p.add_argument("--checker-timeout", type=float)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("syntax", parents=[common], help="Syntax-check Verilog files")
    p.add_argument("files", nargs="+")
    p.add_argument("--dump-ast", action="store_true")
    p.add_argument("--dump-fragments", action="store_true")
    p.set_defaults(handler=cmd_syntax)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Map flag values onto the nested Config layout; unset flags stay None."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": get("seed"),
        "workers": get("workers"),
        "log_level": get("log_level"),
        "paths": {
            "corpus_dir": get("corpus_dir"),
            "dataset": get("dataset"),
            "vocab": get("vocab"),
            "model": get("model"),
            "report": get("report"),
            "prompts": get("prompts"),
            "medusa_model": get("medusa_model"),
        },
        "tokenizer": {"vocab_size": get("vocab_size")},
        "labels": {"heads": get("label_heads")},
        "refmodel": {
            "n": get("n"),
            "heads": get("ref_heads"),
            "alpha": get("alpha"),
            "latency_ms": get("latency_ms"),
            "labels": get("ref_labels"),
        },
        "acceptance": {
            "epsilon": get("epsilon"),
            "delta": get("delta"),
            "temperature": get("temperature"),
            "top_k_per_head": get("top_k"),
            "max_candidates": get("max_candidates"),
            "heads": get("spec_heads"),
            "fragment_truncation": get("truncation"),
        },
        "corpus": {
            "shingle_k": get("shingle_k"),
            "num_hashes": get("num_hashes"),
            "threshold": get("threshold"),
            "comment_ratio_max": get("comment_ratio"),
            "minhash_seed": get("minhash_seed"),
            "vocab_size": get("vocab_size"),
        },
        "bench": {
            "methods": get("methods"),
            "temperatures": get("temperatures"),
            "samples_per_prompt": get("samples"),
            "ks": get("ks"),
            "max_tokens": get("max_tokens"),
            "seed": get("seed"),
            "workers": get("workers"),
            "checker_command": get("checker_cmd"),
            "checker_timeout": get("checker_timeout"),
        },
    }


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True), flush=True)


def cmd_corpus(args: argparse.Namespace, config: Config) -> int:
    vocab_path = Path(config.paths.vocab)
    vocab = load_vocab(vocab_path) if args.vocab and vocab_path.exists() else None
    if not args.vocab and vocab_path.exists():
        logger.warning(f"⚠️ No --vocab given; retraining and overwriting {vocab_path}")
    dataset = Path(config.paths.dataset)
    report_path = args.stage_report or dataset.with_suffix(".report.json")
    result = run_pipeline(config.paths.corpus_dir, dataset, config.corpus, vocab, report_path, config.workers)
    if vocab is None:
        save_vocab(result.vocab, vocab_path)
    _print_json(result.report)
    return EXIT_OK


def _fragment_corpus(corpus_dir: str) -> List[bytes]:
    texts = []
    for raw in ingest_directory(corpus_dir):
        try:
            fc = segment(raw.data, default_significant_tokens(raw.data))
        except LexError as e:
            logger.warning(f"⚠️ Skipping {raw.path}: {e}")
            continue
        texts.extend(fc.texts)
    return texts


def cmd_tokenize(args: argparse.Namespace, config: Config) -> int:
    if args.action == "train":
        texts = _fragment_corpus(config.paths.corpus_dir)
        if not texts:
            raise CorpusError(f"no Verilog fragments found under {config.paths.corpus_dir}")
        vocab = train_bpe(texts, config.tokenizer.vocab_size)
        save_vocab(vocab, config.paths.vocab)
        _print_json({"vocab": config.paths.vocab, "size": vocab.size, "fingerprint": vocab.fingerprint()})
        return EXIT_OK

    if not args.file:
        raise CliUsageError("tokenize encode needs --file")
    vocab = load_vocab(config.paths.vocab)
    source = Path(args.file).read_bytes()
    fc = segment(source, default_significant_tokens(source))
    seq = encode_fragmented(fc, vocab)
    if args.show_frag:
        for index, fragment in enumerate(fc.fragments):
            ids = [i for i, p in zip(seq.ids, seq.provenance) if p == index]
            print(f"{index}\t{json.dumps(fragment.text.decode('utf-8', errors='replace'))}\t{ids}")
    else:
        _print_json({"ids": seq.ids, "fragments": len(fc), "frag_count": seq.count(FRAG)})
    return EXIT_OK


def _label_inputs(args: argparse.Namespace, config: Config) -> List[List[int]]:
    if args.ids is not None:
        return [args.ids]
    if args.file:
        vocab = load_vocab(config.paths.vocab)
        source = Path(args.file).read_bytes()
        return [encode_fragmented(segment(source, default_significant_tokens(source)), vocab).ids]
    return [record["token_ids_with_frag"] for record in load_dataset(args.dataset)]


def cmd_labels(args: argparse.Namespace, config: Config) -> int:
    H = config.labels.heads
    sequences = [s for s in _label_inputs(args, config) if s]
    if not sequences:
        raise LabelError("no token sequences to build labels from")
    matrices = [build_labels_parallel(seq, H) for seq in sequences]

    if args.check:
        mismatches = [i for i, (seq, m) in enumerate(zip(sequences, matrices)) if not m.equals(build_labels_naive(seq, H))]
        if mismatches:
            logger.error(f"❌ Parallel labels differ from the naive oracle for sequences {mismatches}")
            return EXIT_DATA
        logger.info(f"✅ Parallel labels match the naive oracle on {len(sequences)} sequences")

    first = matrices[0]
    if args.output:
        if args.format == "binary":
            save_labels_binary(first, args.output)
        else:
            save_labels_json(first, args.output)
    elif not args.stats:
        _print_json(first.to_dict())
    if args.stats:
        print(label_statistics(first).to_string(index=False))
    return EXIT_OK


def cmd_train_ref(args: argparse.Namespace, config: Config) -> int:
    records = load_dataset(config.paths.dataset)
    sequences = [record["token_ids_with_frag"] + [EOS] for record in records if record.get("token_ids_with_frag")]
    if not sequences:
        raise CorpusError(f"dataset {config.paths.dataset} holds no token sequences")
    vocab_path = Path(config.paths.vocab)
    vocab = load_vocab(vocab_path) if vocab_path.exists() else None
    ref = config.refmodel

    def train(labels: str, output: str) -> Dict[str, Any]:
        model = train_ngram(
            sequences,
            ref.n,
            ref.heads,
            ref.alpha,
            vocab_size=vocab.size if vocab else None,
            vocab_fingerprint=vocab.fingerprint() if vocab else None,
            labels=labels,
        )
        path = save_model(model, output)
        return {"model": str(path), "fingerprint": model_fingerprint(path), "labels": labels}

    summary = {**train(ref.labels, config.paths.model), "sequences": len(sequences)}
    if config.paths.medusa_model:
        summary["medusa"] = train("medusa", config.paths.medusa_model)
    _print_json(summary)
    return EXIT_OK


def cmd_decode(args: argparse.Namespace, config: Config) -> int:
    vocab = load_vocab(config.paths.vocab)
    prompt_ids = encode_prompt(Prompt(id="cli", prefix=args.prompt), vocab)
    latency = config.refmodel.latency_ms
    if args.oracle_target:
        source = Path(args.oracle_target).read_bytes()
        target = encode_fragmented(segment(source, default_significant_tokens(source)), vocab).ids
        model = oracle_mock(target, vocab.size, num_heads=max(config.refmodel.heads, 1), prompt_len=len(prompt_ids), latency_ms=latency)
    else:
        model = load_model(config.paths.model, latency_ms=latency)

    stop = StopCriteria(max_tokens=config.bench.max_tokens)
    if args.mode == "ntp":
        result = ntp_decode(model, prompt_ids, config.acceptance.temperature, stop, seed=config.seed)
    else:
        result = decode(model, prompt_ids, config.acceptance, stop, seed=config.seed)
    if args.trace:
        write_trace(result.trace, args.trace)

    print(args.prompt + detokenize(result.output, vocab).decode("utf-8", errors="replace"))
    trace = result.trace
    _print_json(
        {
            "mode": args.mode,
            "steps": len(trace.steps),
            "total_tokens": trace.total_tokens,
            "model_calls": trace.model_calls,
            "wall_time": round(trace.wall_time, 6),
            "fragment_violations": len(fragment_violations(trace)),
        }
    )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Config) -> int:
    from tools.functional_checker import FunctionalChecker

    if not config.paths.prompts:
        raise CliUsageError("bench needs --prompts or paths.prompts in the config")
    bench = config.bench
    if METHOD_MEDUSA in bench.methods and not config.paths.medusa_model:
        raise CliUsageError("the medusa method needs --medusa-model or paths.medusa_model in the config")
    vocab = load_vocab(config.paths.vocab)
    latency = config.refmodel.latency_ms
    model = load_model(config.paths.model, latency_ms=latency)
    models = {m: model for m in bench.methods if m != METHOD_MEDUSA}
    if METHOD_MEDUSA in bench.methods:
        models[METHOD_MEDUSA] = load_model(config.paths.medusa_model, latency_ms=latency)
    prompts = load_prompts(config.paths.prompts)
    checker = FunctionalChecker(bench.checker_command, bench.checker_timeout) if bench.checker_command else None
    report = run_benchmark(models, prompts, bench, config.acceptance, vocab, checker=checker)
    csv_path = args.csv or str(Path(config.paths.report).with_suffix(".csv"))
    write_report(report, config.paths.report, csv_path)
    print(report.to_frame().to_string(index=False))
    return EXIT_OK


def cmd_syntax(args: argparse.Namespace, config: Config) -> int:
    results = []
    all_ok = True
    for name in args.files:
        data = Path(name).read_bytes()
        report = syntax_check(data)
        entry: Dict[str, Any] = {"file": name, **report.to_dict()}
        if args.dump_ast and report.ok:
            entry["ast"] = dump_ast(data)
        if args.dump_fragments:
            try:
                entry["fragments"] = dump_fragments(data)
            except LexError as e:
                entry["fragments_error"] = str(e)
        all_ok = all_ok and report.ok
        results.append(entry)
    _print_json(results if len(results) > 1 else results[0])
    return EXIT_OK if all_ok else EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(resolve_log_level(args.log_level))
    if args.otel_console:
        setup_console_tracing()
    try:
        config = load_config(args.config, _overrides(args))
        logger.info(f"Resolved configuration: {config.model_dump_json()}")
        return args.handler(args, config)
    except CliUsageError as e:
        parser.print_usage(sys.stderr)
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    except CheckerError as e:
        logger.error(f"❌ External checker failed: {e}")
        return EXIT_TOOL
    except VerispecError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"❌ File error: {e}")
        return EXIT_DATA
    finally:
        shutdown_tracing()


if __name__ == "__main__":
    sys.exit(main())
