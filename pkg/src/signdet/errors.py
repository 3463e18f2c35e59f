"""Exception hierarchy shared across the toolkit.

Every error raised by signdet derives from SignDetError so callers (and the
CLI) can catch one base class. Parse-time errors carry the source line number
and the offending token when known.
"""

from __future__ import annotations


class SignDetError(Exception):
    """Base class for all signdet errors."""


class ParseError(SignDetError):
    """Base for annotation parse failures; carries source position."""

    def __init__(self, message: str, line_no: int | None = None, token: str | None = None):
        self.line_no = line_no
        self.token = token
        parts = [message]
        if line_no is not None:
            parts.append(f"(line {line_no})")
        if token is not None:
            parts.append(f"token {token!r}")
        super().__init__(" ".join(parts))


class MalformedLine(ParseError):
    """Annotation line with wrong field count or non-numeric fields."""


class ClassOutOfRange(ParseError):
    """Class id outside [0, C)."""


class BoxOutOfBounds(ParseError):
    """Box with non-positive size or edges outside the unit image."""


class IoFailure(SignDetError):
    """A file could not be read or written."""


class UnsupportedFormat(SignDetError):
    """Image data in a format the codec does not handle."""


class BadHeader(SignDetError):
    """Malformed netpbm header."""


class TruncatedData(SignDetError):
    """Image sample data shorter than the header promises."""


class IndexOutOfRange(SignDetError):
    """A requested frame index is not available."""


class DegenerateSplit(SignDetError):
    """A split with positive ratio would receive zero entries."""


class CollisionError(SignDetError):
    """Two objects were assigned to the same (cell, anchor) slot."""


class ShapeMismatch(SignDetError):
    """Grid or layer-chain shapes are incompatible."""


class Diverged(SignDetError):
    """Gradient descent left the stable region (loss > 1e6 or non-finite)."""
