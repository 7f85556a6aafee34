"""
Syntax-enriched multi-head labels and the multi-head training loss.

Row 0 of a label matrix is the base model's next-token label; row i is the
label left-shifted by i and padded with PAD. Every column is then cut after
the deepest FRAG it holds: rows below that FRAG become IGNORE, so a head is
only supervised on predictions that finish a fragment.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from utils.artifact_helpers import load_json, save_json

from .errors import LabelError, ShapeMismatchError
from .tokenizer import FRAG, IGNORE, PAD, TokenSequence

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"VSLB"
_HEADER = struct.Struct("<4sIIB")


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_max: float = Field(0.2, ge=0.0)
    gamma: float = Field(0.8, gt=0.0, le=1.0)
    heads: int = Field(10, ge=1)


@dataclass(eq=False)
class LabelMatrix:
    rows: np.ndarray

    @property
    def H(self) -> int:
        return self.rows.shape[0] - 1

    @property
    def S(self) -> int:
        return self.rows.shape[1]

    @property
    def shape(self):
        return self.rows.shape

    def equals(self, other: "LabelMatrix") -> bool:
        return self.rows.shape == other.rows.shape and bool(np.array_equal(self.rows, other.rows))

    def tolist(self) -> List[List[int]]:
        return self.rows.tolist()

    def to_dict(self) -> dict:
        return {"H": self.H, "S": self.S, "rows": self.tolist()}


def _as_ids(L0: Union[TokenSequence, Sequence[int], np.ndarray]) -> np.ndarray:
    ids = L0.ids if isinstance(L0, TokenSequence) else L0
    return np.asarray(ids, dtype=np.int64).reshape(-1)


def _check(ids: np.ndarray, H: int) -> None:
    if H < 1:
        raise LabelError(f"head count must be at least 1, got {H}")
    if ids.size == 0:
        raise LabelError("cannot build labels for an empty sequence")


def build_labels_naive(L0: Union[TokenSequence, Sequence[int]], H: int) -> LabelMatrix:
    """
    Reference construction with an explicit loop over columns.

    Args:
        L0: Fragment-encoded base labels
        H: Number of heads (rows 1..H)

    Returns:
        (H+1) x S LabelMatrix
    """
    ids = _as_ids(L0).tolist()
    _check(np.asarray(ids), H)
    S = len(ids)
    rows = [[ids[s + i] if s + i < S else PAD for s in range(S)] for i in range(H + 1)]
    for s in range(S):
        last = None
        for i in range(H + 1):
            if rows[i][s] == FRAG:
                last = i
        keep_through = 0 if last is None else last
        for i in range(keep_through + 1, H + 1):
            rows[i][s] = IGNORE
    return LabelMatrix(np.asarray(rows, dtype=np.int64))


def build_labels_parallel(L0: Union[TokenSequence, Sequence[int]], H: int) -> LabelMatrix:
    """Same result as build_labels_naive using whole-matrix numpy operations."""
    ids = _as_ids(L0)
    _check(ids, H)
    padded = np.concatenate([ids, np.full(H, PAD, dtype=np.int64)])
    shifted = sliding_window_view(padded, H + 1).T
    row_index = np.arange(H + 1)[:, None]
    last_frag = np.where(shifted == FRAG, row_index, -1).max(axis=0)
    masked = row_index > np.maximum(last_frag, 0)[None, :]
    return LabelMatrix(np.where(masked, IGNORE, shifted).astype(np.int64))


def build_labels_medusa(L0: Union[TokenSequence, Sequence[int]], H: int) -> LabelMatrix:
    """Plain shifted labels with PAD and no fragment masking."""
    ids = _as_ids(L0)
    _check(ids, H)
    padded = np.concatenate([ids, np.full(H, PAD, dtype=np.int64)])
    return LabelMatrix(np.ascontiguousarray(sliding_window_view(padded, H + 1).T))


def label_statistics(matrix: LabelMatrix) -> pd.DataFrame:
    """Per-row fractions of IGNORE, PAD and supervised entries."""
    rows = matrix.rows
    ignore = (rows == IGNORE).mean(axis=1)
    pad = (rows == PAD).mean(axis=1)
    return pd.DataFrame(
        {
            "row": np.arange(rows.shape[0]),
            "ignore_fraction": ignore,
            "pad_fraction": pad,
            "supervised_fraction": 1.0 - ignore - pad,
        }
    )


def lambda_schedule(progress: float, cfg: LossConfig = LossConfig()) -> float:
    """Sine warm-up of the head-loss weight: lambda_max * sin(pi * progress / 2)."""
    if not 0.0 <= progress <= 1.0:
        raise LabelError(f"progress must lie in [0, 1], got {progress}")
    return cfg.lambda_max * math.sin(math.pi * progress / 2.0)


@dataclass
class LossBreakdown:
    total: float
    base: float
    per_head: List[float]

    def to_dict(self) -> Dict[str, object]:
        return {"total": self.total, "base": self.base, "per_head": list(self.per_head)}


def combine_losses(base: float, per_head: Sequence[float], lam: float, gamma: float) -> float:
    """base + lam * sum(per_head[i-1] * gamma**i) for heads i = 1..H."""
    weighted = sum(loss * gamma ** i for i, loss in enumerate(per_head, start=1))
    return base + lam * weighted


def _row_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    supervised = (labels != IGNORE) & (labels != PAD)
    if not supervised.any():
        return 0.0
    picked = logits[supervised].astype(np.float64)
    targets = labels[supervised]
    peak = picked.max(axis=1, keepdims=True)
    log_norm = peak[:, 0] + np.log(np.exp(picked - peak).sum(axis=1))
    nll = log_norm - picked[np.arange(targets.size), targets]
    return float(nll.mean())


def compute_multihead_loss(
    logits: np.ndarray, labels: Union[LabelMatrix, np.ndarray], lam: float, cfg: LossConfig = LossConfig()
) -> LossBreakdown:
    """
    Mean cross-entropy per row over supervised positions, combined as
    base + lam * sum(head_i * gamma**i).

    Args:
        logits: (H+1) x S x V array
        labels: LabelMatrix of shape (H+1) x S
        lam: Head-loss weight, usually from lambda_schedule
        cfg: Supplies gamma

    Raises:
        ShapeMismatchError: logits and labels disagree, or a label id is
            outside the logit vocabulary
    """
    rows = labels.rows if isinstance(labels, LabelMatrix) else np.asarray(labels)
    logits = np.asarray(logits)
    if logits.ndim != 3 or logits.shape[:2] != rows.shape:
        raise ShapeMismatchError(f"logits shape {logits.shape} does not match labels shape {rows.shape}")
    supervised = rows[(rows != IGNORE) & (rows != PAD)]
    if supervised.size and (supervised.max() >= logits.shape[2] or supervised.min() < 0):
        raise ShapeMismatchError(f"label id {int(supervised.max())} outside logit vocabulary of {logits.shape[2]}")
    losses = [_row_cross_entropy(logits[i], rows[i]) for i in range(rows.shape[0])]
    base, per_head = losses[0], losses[1:]
    return LossBreakdown(combine_losses(base, per_head, lam, cfg.gamma), base, per_head)


def save_labels_binary(matrix: LabelMatrix, path: Union[str, Path]) -> Path:
    """Write the VSLB format: magic, H, S, id width, then row-major little-endian ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    width = 2 if int(matrix.rows.max(initial=0)) < (1 << 16) else 4
    dtype = np.dtype("<u2" if width == 2 else "<u4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(BINARY_MAGIC, matrix.H, matrix.S, width))
        f.write(np.ascontiguousarray(matrix.rows, dtype=dtype).tobytes())
    return path


def load_labels_binary(path: Union[str, Path]) -> LabelMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LabelError(f"{path} is too short to be a label file")
    magic, H, S, width = _HEADER.unpack_from(data)
    if magic != BINARY_MAGIC or width not in (2, 4):
        raise LabelError(f"{path} is not a VSLB label file")
    dtype = np.dtype("<u2" if width == 2 else "<u4")
    body = data[_HEADER.size:]
    if len(body) != (H + 1) * S * width:
        raise LabelError(f"{path} body holds {len(body)} bytes, expected {(H + 1) * S * width}")
    rows = np.frombuffer(body, dtype=dtype).reshape(H + 1, S).astype(np.int64)
    return LabelMatrix(rows)


def save_labels_json(matrix: LabelMatrix, path: Union[str, Path]) -> Path:
    return save_json(matrix.to_dict(), path)


def load_labels_json(path: Union[str, Path]) -> LabelMatrix:
    data = load_json(path)
    rows = np.asarray(data["rows"], dtype=np.int64)
    if rows.shape != (data["H"] + 1, data["S"]):
        raise LabelError(f"{path} rows do not match declared H={data['H']} S={data['S']}")
    return LabelMatrix(rows)
