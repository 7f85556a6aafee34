"""
Speedup demo with an oracle model.

Encodes a Verilog file with [FRAG] markers, then decodes it twice against an
oracle that replays the file: once speculatively and once token by token.
Each model call sleeps for --latency-ms so the wall-clock ratio tracks the
ratio of model calls.

Usage:
    python run_speedup_demo.py tests/fixtures/counter.v --latency-ms 5
"""

import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from utils.config_helpers import LOG_FORMAT
from verispec.specdec import AcceptanceParams, StopCriteria, decode, fragment_violations, ntp_decode
from verispec.refmodel import oracle_mock
from verispec.tokenizer import decode as detokenize, encode_fragmented, train_bpe
from verispec.verilog_syntax import default_significant_tokens, segment

logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
logger = logging.getLogger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser(description="Oracle speedup demo")
    parser.add_argument("file", help="Verilog source replayed by the oracle")
    parser.add_argument("--heads", type=int, default=10)
    parser.add_argument("--vocab-size", type=int, default=512)
    parser.add_argument("--latency-ms", type=float, default=2.0)
    args = parser.parse_args()

    with open(args.file, "rb") as f:
        source = f.read()
    fc = segment(source, default_significant_tokens(source))
    vocab = train_bpe(fc.texts, args.vocab_size)
    target = encode_fragmented(fc, vocab).ids
    logger.info(f"Target: {len(fc)} fragments, {len(target)} tokens (vocab {vocab.size})")

    stop = StopCriteria(max_tokens=len(target))
    model = oracle_mock(target, vocab.size, num_heads=args.heads, latency_ms=args.latency_ms)

    spec = decode(model, [], AcceptanceParams(), stop)
    ntp = ntp_decode(model, [], 0.0, stop)

    if detokenize(spec.output, vocab) != source:
        logger.error("❌ Speculative output differs from the source")
        return 1
    logger.info(f"✅ Speculative decode reproduced the source in {len(spec.trace.steps)} steps")
    logger.info(f"Model calls: speculative {spec.trace.model_calls}, NTP {ntp.trace.model_calls}")
    logger.info(f"Mean emitted per step: {spec.trace.emitted_tokens / max(1, len(spec.trace.steps)):.2f}")
    logger.info(f"Wall time: speculative {spec.trace.wall_time:.3f}s, NTP {ntp.trace.wall_time:.3f}s")
    if spec.trace.wall_time > 0:
        logger.info(f"Speedup: {ntp.trace.wall_time / spec.trace.wall_time:.2f}x")
    violations = fragment_violations(spec.trace)
    if violations:
        logger.warning(f"⚠️ Steps ending mid-fragment: {violations}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
