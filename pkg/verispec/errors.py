"""
Exception hierarchy for verispec.

Everything the library raises on bad data derives from VerispecError so the
CLI can map it onto exit codes in one place.
"""

from typing import Optional, Tuple


class VerispecError(Exception):
    """Base class for all verispec errors."""


class LexError(VerispecError):
    """Raised when the lexer cannot produce a token at some byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class VerilogSyntaxError(VerispecError):
    """Raised by the parser; carries the offending span and what was expected."""

    def __init__(self, expected: str, span: Tuple[int, int], found: Optional[bytes] = None):
        found_text = found.decode("utf-8", errors="replace") if found else "end of input"
        super().__init__(f"expected {expected}, found {found_text!r} at bytes {span[0]}-{span[1]}")
        self.expected = expected
        self.span = span
        self.found = found

    def to_dict(self) -> dict:
        return {
            "expected": self.expected,
            "span": list(self.span),
            "found": self.found.decode("utf-8", errors="replace") if self.found else None,
            "message": str(self),
        }


class VocabError(VerispecError):
    """Invalid vocabulary input or a corrupt vocab file."""


class LabelError(VerispecError):
    """Invalid label construction request."""


class ShapeMismatchError(VerispecError):
    """Logits and labels disagree in shape or vocabulary size."""


class DecodeError(VerispecError):
    """The decoding loop was configured or driven incorrectly."""


class ScriptExhaustedError(DecodeError):
    """A scripted model was called more often than its script allows."""


class ModelFileError(VerispecError):
    """A model file is missing, truncated or of the wrong format."""


class CorpusError(VerispecError):
    """Dataset construction failed on its inputs."""


class EvaluationError(VerispecError):
    """A metric is undefined for the given inputs."""


class CheckerError(VerispecError):
    """The external functional checker could not be run."""


class ConfigError(VerispecError):
    """The configuration file or overrides are invalid."""
