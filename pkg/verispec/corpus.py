"""
Dataset construction pipeline.

Stages, in order: ingest `.v` files (plain or inside archives), slice out
`module ... endmodule` units with the lexer, drop near-duplicates with
MinHash, drop comment-heavy or syntactically broken modules, annotate
fragments and emit Alpaca-style JSON lines.
"""

import json
import logging
import tarfile
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Union

import numpy as np
from datasketch import MinHash, MinHashLSH
from opentelemetry import trace
from pydantic import BaseModel, ConfigDict, Field

from utils.artifact_helpers import read_jsonl, save_json, write_jsonl
from utils.telemetry_helpers import get_tracer

from .errors import CorpusError, LexError
from .tokenizer import Vocab, decode, encode_fragmented, strip_specials, train_bpe
from .verilog_syntax import (
    FragmentedCode,
    TokenKind,
    comment_bytes,
    default_significant_tokens,
    lex,
    segment,
    syntax_check,
)

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

ARCHIVE_SUFFIXES = (".tar", ".tar.gz", ".tgz", ".zip")
SIDECAR_SUFFIX = ".desc.json"


class CorpusParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    shingle_k: int = Field(8, ge=1)
    num_hashes: int = Field(128, ge=2)
    minhash_seed: int = 1
    threshold: float = Field(0.85, gt=0.0, le=1.0)
    lsh_threshold: float = Field(0.5, gt=0.0, le=1.0)
    comment_ratio_max: float = Field(0.8, ge=0.0, le=1.0)
    vocab_size: int = Field(1024, ge=261)


@dataclass
class RawFile:
    path: str
    data: bytes
    origin: str = "local"
    descriptions: Dict[str, str] = field(default_factory=dict)


@dataclass
class MinHashSignature:
    minhash: MinHash
    shingle_k: int
    seed: int

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.minhash.hashvalues, dtype=np.uint64)

    @property
    def num_hashes(self) -> int:
        return len(self.minhash.hashvalues)

    def jaccard(self, other: "MinHashSignature") -> float:
        return float(self.minhash.jaccard(other.minhash))


@dataclass
class ModuleRecord:
    code: bytes
    name: str
    source: str
    description: Optional[str] = None
    fragments: Optional[FragmentedCode] = None
    signature: Optional[MinHashSignature] = None


def _parse_sidecar(raw: bytes, where: str) -> Dict[str, str]:
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.warning(f"⚠️ Ignoring unreadable description sidecar {where}: {e}")
        return {}
    if not isinstance(data, dict):
        logger.warning(f"⚠️ Ignoring description sidecar {where}: not a mapping")
        return {}
    return {str(k): str(v) for k, v in data.items()}


def _admit(path: str, data: bytes, origin: str, descriptions: Dict[str, str]) -> Optional[RawFile]:
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        logger.warning(f"⚠️ Skipping {path}: not valid UTF-8 text")
        return None
    return RawFile(path, data, origin, descriptions)


def _sidecar_name(name: str) -> str:
    return name[: -len(".v")] + SIDECAR_SUFFIX


def _ingest_archive(archive: Path, label: str) -> List[RawFile]:
    members: Dict[str, bytes] = {}
    if archive.suffix == ".zip":
        with zipfile.ZipFile(archive) as zf:
            for info in zf.infolist():
                if not info.is_dir() and (info.filename.endswith(".v") or info.filename.endswith(SIDECAR_SUFFIX)):
                    members[info.filename] = zf.read(info)
    else:
        with tarfile.open(archive, "r:*") as tf:
            for info in tf.getmembers():
                if info.isfile() and (info.name.endswith(".v") or info.name.endswith(SIDECAR_SUFFIX)):
                    handle = tf.extractfile(info)
                    if handle is not None:
                        members[info.name] = handle.read()
    files = []
    for name in sorted(n for n in members if n.endswith(".v")):
        sidecar = members.get(_sidecar_name(name))
        descriptions = _parse_sidecar(sidecar, f"{label}!{name}") if sidecar is not None else {}
        raw = _admit(f"{label}!{name}", members[name], "archive", descriptions)
        if raw is not None:
            files.append(raw)
    return files


def ingest_directory(path: Union[str, Path]) -> List[RawFile]:
    """
    Collect `.v` files under a directory, plus `.v` members of archives.

    Files are returned in sorted path order. A `<stem>.desc.json` next to a
    file maps module names to descriptions.

    Raises:
        CorpusError: path is not a directory
    """
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    files: List[RawFile] = []
    for source in sorted(root.rglob("*.v")):
        if not source.is_file():
            continue
        sidecar = source.with_name(_sidecar_name(source.name))
        descriptions = _parse_sidecar(sidecar.read_bytes(), str(sidecar)) if sidecar.is_file() else {}
        raw = _admit(source.relative_to(root).as_posix(), source.read_bytes(), "local", descriptions)
        if raw is not None:
            files.append(raw)
    archives = sorted(p for p in root.rglob("*") if p.is_file() and p.name.endswith(ARCHIVE_SUFFIXES))
    for archive in archives:
        label = archive.relative_to(root).as_posix()
        try:
            files.extend(_ingest_archive(archive, label))
        except (tarfile.TarError, zipfile.BadZipFile, OSError) as e:
            logger.warning(f"⚠️ Skipping unreadable archive {label}: {e}")
    logger.info(f"✅ Ingested {len(files)} files from {root}")
    return files


def extract_modules(file: RawFile) -> List[ModuleRecord]:
    """Slice balanced module/endmodule spans out of a file using the token stream."""
    try:
        tokens = [t for t in lex(file.data) if not t.is_trivia]
    except LexError as e:
        logger.warning(f"⚠️ Cannot lex {file.path}: {e}")
        return []
    records: List[ModuleRecord] = []
    depth = 0
    start = 0
    name = ""
    for index, tok in enumerate(tokens):
        if tok.kind is not TokenKind.KEYWORD:
            continue
        if tok.text in (b"module", b"macromodule"):
            if depth == 0:
                start = tok.span[0]
                nxt = tokens[index + 1] if index + 1 < len(tokens) else None
                name = nxt.text.decode("utf-8") if nxt is not None and nxt.kind is TokenKind.IDENTIFIER else ""
            depth += 1
        elif tok.text == b"endmodule" and depth > 0:
            depth -= 1
            if depth == 0:
                records.append(
                    ModuleRecord(
                        code=file.data[start:tok.span[1]],
                        name=name,
                        source=file.path,
                        description=file.descriptions.get(name),
                    )
                )
    return records


def shingles(text: bytes, k: int) -> Set[bytes]:
    if len(text) <= k:
        return {text} if text else set()
    return {text[i:i + k] for i in range(len(text) - k + 1)}


def minhash(text: bytes, k: int = 8, num_hashes: int = 128, seed: int = 1) -> MinHashSignature:
    """MinHash signature over the set of k-byte shingles."""
    m = MinHash(num_perm=num_hashes, seed=seed)
    for shingle in sorted(shingles(text, k)):
        m.update(shingle)
    return MinHashSignature(m, k, seed)


def dedup(
    records: Sequence[ModuleRecord],
    threshold: float = 0.85,
    params: CorpusParams = CorpusParams(),
) -> List[ModuleRecord]:
    """
    Greedy near-duplicate removal in input order.

    LSH at params.lsh_threshold proposes candidates; a record is dropped when
    its signature Jaccard with any retained candidate is >= threshold.
    """
    lsh = MinHashLSH(threshold=params.lsh_threshold, num_perm=params.num_hashes)
    retained: Dict[str, MinHashSignature] = {}
    kept: List[ModuleRecord] = []
    for index, record in enumerate(records):
        if record.signature is None:
            record.signature = minhash(record.code, params.shingle_k, params.num_hashes, params.minhash_seed)
        signature = record.signature
        candidates = sorted(lsh.query(signature.minhash))
        if any(signature.jaccard(retained[key]) >= threshold for key in candidates):
            logger.debug(f"Dropping near-duplicate module {record.name} from {record.source}")
            continue
        key = str(index)
        lsh.insert(key, signature.minhash)
        retained[key] = signature
        kept.append(record)
    logger.info(f"✅ Dedup kept {len(kept)} of {len(records)} modules")
    return kept


def quality_issue(record: ModuleRecord, comment_ratio_max: float = 0.8) -> Optional[str]:
    """Return 'comments' or 'syntax' when a record should be dropped, else None."""
    try:
        tokens = lex(record.code)
    except LexError:
        return "syntax"
    comments, content = comment_bytes(tokens)
    ratio = comments / content if content else 1.0
    if ratio > comment_ratio_max:
        return "comments"
    if not syntax_check(record.code).ok:
        return "syntax"
    return None


def filter_quality(records: Sequence[ModuleRecord], comment_ratio_max: float = 0.8) -> List[ModuleRecord]:
    return [r for r in records if quality_issue(r, comment_ratio_max) is None]


def annotate_fragments(records: Iterable[ModuleRecord]) -> None:
    for record in records:
        record.fragments = segment(record.code, default_significant_tokens(record.code))


def emit_dataset(records: Sequence[ModuleRecord], vocab: Vocab, path: Union[str, Path]) -> Dict[str, int]:
    """
    Write one Alpaca-style JSON line per record.

    Returns:
        {"records": count, "bytes": file size}
    """
    lines = []
    for record in records:
        fragments = record.fragments
        if fragments is None:
            fragments = segment(record.code, default_significant_tokens(record.code))
        ids = encode_fragmented(fragments, vocab).ids
        if decode(strip_specials(ids), vocab) != record.code:
            raise CorpusError(f"fragment roundtrip failed for module {record.name} in {record.source}")
        lines.append(
            {
                "instruction": record.description or "",
                "description_missing": record.description is None,
                "input": "",
                "output": record.code.decode("utf-8"),
                "name": record.name,
                "source": record.source,
                "fragment_spans": [list(f.span) for f in fragments],
                "token_ids_with_frag": ids,
            }
        )
    count = write_jsonl(lines, path)
    size = Path(path).stat().st_size
    logger.info(f"✅ Wrote {count} records ({size} bytes) to {path}")
    return {"records": count, "bytes": size}


def load_dataset(path: Union[str, Path]) -> List[dict]:
    try:
        return read_jsonl(path)
    except FileNotFoundError as e:
        raise CorpusError(f"dataset not found: {path}") from e


@dataclass
class PipelineResult:
    records: List[ModuleRecord]
    vocab: Vocab
    report: dict


@tracer.start_as_current_span("verispec.corpus_pipeline")
def run_pipeline(
    input_dir: Union[str, Path],
    output_path: Union[str, Path],
    params: CorpusParams = CorpusParams(),
    vocab: Optional[Vocab] = None,
    report_path: Optional[Union[str, Path]] = None,
    workers: int = 1,
) -> PipelineResult:
    """
    Run ingest, extract, dedup, quality filter, annotate and emit.

    Args:
        input_dir: Directory of `.v` files and archives
        output_path: Dataset JSONL destination
        params: Pipeline parameters
        vocab: Vocabulary for token ids; trained on surviving fragments if None
        report_path: Optional JSON stage report destination
        workers: Threads for the per-file stages

    Raises:
        CorpusError: no input files, or nothing survives the filters
    """
    files = ingest_directory(input_dir)
    if not files:
        raise CorpusError(f"no .v files found under {input_dir}")
    stages = []

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        extracted = [record for group in pool.map(extract_modules, files) for record in group]
    stages.append({"stage": "extract", "in": len(files), "out": len(extracted), "dropped": 0})

    unique = dedup(extracted, params.threshold, params)
    stages.append({"stage": "dedup", "in": len(extracted), "out": len(unique), "dropped": len(extracted) - len(unique)})

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        issues = list(pool.map(lambda r: quality_issue(r, params.comment_ratio_max), unique))
    survivors = [r for r, issue in zip(unique, issues) if issue is None]
    stages.append(
        {
            "stage": "quality",
            "in": len(unique),
            "out": len(survivors),
            "dropped": len(unique) - len(survivors),
            "dropped_comments": issues.count("comments"),
            "dropped_syntax": issues.count("syntax"),
        }
    )
    if not survivors:
        raise CorpusError("no modules survived the pipeline")

    annotate_fragments(survivors)
    if vocab is None:
        vocab = train_bpe((f.text for r in survivors for f in r.fragments.fragments), params.vocab_size)
    summary = emit_dataset(survivors, vocab, output_path)
    stages.append({"stage": "emit", "in": len(survivors), "out": summary["records"], "dropped": 0})

    report = {
        "input_dir": str(input_dir),
        "files": len(files),
        "stages": stages,
        "records": summary["records"],
        "bytes": summary["bytes"],
        "described": sum(1 for r in survivors if r.description is not None),
        "vocab_fingerprint": vocab.fingerprint(),
        "params": params.model_dump(),
    }
    span = trace.get_current_span()
    for stage in stages:
        span.set_attribute(f"verispec.{stage['stage']}.out", stage["out"])
    if report_path is not None:
        save_json(report, report_path)
    logger.info(f"✅ Corpus pipeline finished: {summary['records']} records from {len(files)} files")
    return PipelineResult(survivors, vocab, report)
