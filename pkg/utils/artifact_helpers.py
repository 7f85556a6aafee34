"""
Artifact Helper Functions for verispec

This module provides small utilities for reading and writing the plain-file
artifacts every stage produces: JSON documents, JSON-lines streams and
content hashes.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def canonical_json(data: Any) -> str:
    """Serialize with sorted keys and fixed separators so equal data gives equal bytes."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_json(data: Any, path: PathLike, indent: int = 2) -> Path:
    """
    Save a JSON document, creating parent directories as needed.

    Args:
        data: JSON-serializable object
        path: Destination file
        indent: Indentation for readability

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    logger.debug(f"Saved {path}")
    return path


def load_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(records: Iterable[Dict[str, Any]], path: PathLike) -> int:
    """
    Write one canonical JSON object per line.

    Returns:
        Number of records written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(canonical_json(record))
            f.write("\n")
            count += 1
    return count


def iter_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                logger.error(f"❌ Bad JSON on line {line_no} of {path}: {e}")
                raise


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
