"""
verispec: syntax-aligned speculative decoding for Verilog.

Modules:
    verilog_syntax  lexer, parser, significant tokens and fragment segmentation
    tokenizer       byte-level BPE with FRAG/PAD/IGNORE/BOS/EOS specials
    labelgen        syntax-enriched multi-head label matrices and loss
    specdec         typical-acceptance speculative decoding with fragment truncation
    refmodel        n-gram multi-head reference model and mocks
    corpus          Verilog corpus pipeline (extract, dedup, filter, emit)
    evalbench       benchmark harness and metrics
    cli             command-line entry point
"""

from .errors import (
    CheckerError,
    ConfigError,
    CorpusError,
    DecodeError,
    EvaluationError,
    LabelError,
    LexError,
    ModelFileError,
    ScriptExhaustedError,
    ShapeMismatchError,
    VerilogSyntaxError,
    VerispecError,
    VocabError,
)
from .labelgen import LabelMatrix, build_labels_naive, build_labels_parallel
from .refmodel import NGramMultiHead, OracleMock, ScriptedMock, load_model, oracle_mock, save_model, train_ngram
from .specdec import AcceptanceParams, DecodeResult, DecodeTrace, StopCriteria, decode, ntp_decode
from .tokenizer import BOS, EOS, FRAG, IGNORE, PAD, Vocab, encode, encode_fragmented, load_vocab, save_vocab, train_bpe
from .verilog_syntax import FragmentedCode, lex, parse, segment, syntax_check

__version__ = "1.0.0"
