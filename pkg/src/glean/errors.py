"""Shared exception types.

Every error a pipeline stage can raise on a per-example basis derives from
GleanError so the harness can fail soft and keep an error ledger.
"""

from __future__ import annotations


class GleanError(Exception):
    """Base class for all package-specific errors."""


class MalformedInput(GleanError):
    """A serialized table does not conform to its format grammar."""

    def __init__(self, format_kind: str, line: int, reason: str):
        self.format_kind = format_kind
        self.line = line
        self.reason = reason
        super().__init__(f"{format_kind} line {line}: {reason}")


class DuplicateHeader(GleanError):
    pass


class NoSwapPossible(GleanError):
    pass


class NoTemplateMatch(GleanError):
    pass


class CanaryCollision(GleanError):
    pass


class IdMismatch(GleanError):
    pass


class DimensionMismatch(GleanError):
    pass


class RowSetMismatch(GleanError):
    pass


class EmptyEvidence(GleanError):
    pass


class NotSimple(GleanError):
    """Query uses aggregation, grouping, joins, or opaque constructs."""


class SqlSyntaxError(GleanError):
    """Raw text is not a SELECT statement at all."""

    def __init__(self, offset: int, reason: str):
        self.offset = offset
        self.reason = reason
        super().__init__(f"syntax error at offset {offset}: {reason}")


class MissingOracle(GleanError):
    pass


class SingleClass(GleanError):
    pass


class DegenerateMarginals(GleanError):
    pass


class BadPattern(GleanError):
    pass


class SchemaError(GleanError):
    """A JSONL record does not match its declared schema."""

    def __init__(self, file: str, line: int, reason: str):
        self.file = file
        self.line = line
        self.reason = reason
        super().__init__(f"{file}:{line}: {reason}")


class DanglingReference(GleanError):
    pass


class DuplicateId(GleanError):
    pass
