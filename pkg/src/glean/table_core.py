"""Canonical table data model, value normalization, and token accounting.

Everything downstream (probes, retrievers, evidence detectors, attribution)
operates on the types defined here. All types are immutable after
construction and all operations are pure, so they are safe to call from any
number of concurrent workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = [
    "Cell",
    "GroundingConfig",
    "NormalizedValue",
    "Table",
    "TokenBudget",
    "count_tokens",
    "jaccard",
    "normalize",
    "parse_numeric",
    "table_contains",
    "tokenize",
    "values_match",
    "word_tokens",
    "DEFAULT_GROUNDING",
]

# Word runs and single punctuation marks are separate tokens; whitespace is
# never a token. "x, y" -> ["x", ",", "y"].
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

_PUNCT_RE = re.compile(r"[^\w\s]")

# Strict numeric grammar applied after separator/currency stripping: sign,
# digits, at most one decimal point. No exponents, no locale guessing.
_NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")

_CURRENCY_CHARS = "$€£%"


def tokenize(text: str) -> list[str]:
    """Casefolded tokens: word runs plus individual punctuation marks."""
    return _TOKEN_RE.findall(text.casefold())


def word_tokens(text: str) -> list[str]:
    """Like tokenize() but punctuation-only tokens dropped."""
    return [t for t in _TOKEN_RE.findall(text.casefold()) if t[0].isalnum() or t[0] == "_"]


def count_tokens(s: str) -> int:
    return len(_TOKEN_RE.findall(s))


def parse_numeric(raw: str) -> float | None:
    """Locale-independent numeric parse.

    Strips surrounding whitespace and currency/percent symbols, removes ","
    and "_" thousands separators, accepts a leading sign (ASCII or U+2212)
    and at most one decimal point. "%" does not rescale the value. Returns
    None when the string is not a number under this grammar.
    """
    s = raw.strip().strip(_CURRENCY_CHARS + " \t")
    if not s:
        return None
    s = s.replace("−", "-").replace(",", "").replace("_", "")
    if _NUMBER_RE.fullmatch(s) is None:
        return None
    return float(s)


def _canonical_numeric_text(num: float) -> str:
    if num == int(num) and abs(num) < 1e16:
        return str(int(num))
    return repr(num)


@dataclass(frozen=True)
class GroundingConfig:
    """Normalization and matching knobs shared by every grounding check.

    Defaults follow the recommended soft-match settings: casefolding,
    punctuation stripping, substring text match, numeric tolerance of
    1e-3 absolute or 1% relative.
    """

    casefold: bool = True
    strip_punct: bool = True
    substring_text_match: bool = True
    numeric_abs_tol: float = 1e-3
    numeric_rel_tol: float = 0.01
    multivalue_policy: str = "any-element"

    def __post_init__(self):
        if self.numeric_abs_tol < 0:
            raise ValueError("numeric_abs_tol must be >= 0")
        if not 0 <= self.numeric_rel_tol <= 1:
            raise ValueError("numeric_rel_tol must be in [0, 1]")
        if self.multivalue_policy not in ("any-element", "all-elements"):
            raise ValueError(f"unknown multivalue_policy {self.multivalue_policy!r}")

    def to_dict(self) -> dict:
        return {
            "casefold": self.casefold,
            "strip_punct": self.strip_punct,
            "substring_text_match": self.substring_text_match,
            "numeric_abs_tol": self.numeric_abs_tol,
            "numeric_rel_tol": self.numeric_rel_tol,
            "multivalue_policy": self.multivalue_policy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundingConfig":
        return cls(**d)


DEFAULT_GROUNDING = GroundingConfig()


@dataclass(frozen=True)
class TokenBudget:
    """Hard cap on serialized table tokens plus the column cap."""

    max_table_tokens: int = 1024
    max_cols: int = 16

    def __post_init__(self):
        if self.max_table_tokens <= 0:
            raise ValueError("max_table_tokens must be > 0")
        if self.max_cols <= 0:
            raise ValueError("max_cols must be > 0")


@dataclass(frozen=True)
class NormalizedValue:
    """Either a parsed number or a normalized text string.

    kind == "numeric" iff the raw string parses under parse_numeric(); in
    that case text holds the canonical numeric spelling. For text, text is
    the casefolded, punctuation-stripped, whitespace-collapsed form.
    """

    kind: str
    num: float | None
    text: str


def normalize(raw: str, cfg: GroundingConfig = DEFAULT_GROUNDING) -> NormalizedValue:
    """Total function; numeric detection precedes the text path.

    Numeric detection runs again on the stripped text (punctuation noise like
    "=5" can hide a number), which keeps normalization idempotent: the text
    field always re-normalizes to the same value.
    """
    num = parse_numeric(raw)
    if num is not None:
        return NormalizedValue("numeric", num, _canonical_numeric_text(num))
    s = raw
    if cfg.casefold:
        s = s.casefold()
    if cfg.strip_punct:
        s = _PUNCT_RE.sub(" ", s)
    s = " ".join(s.split())
    num = parse_numeric(s)
    if num is not None:
        return NormalizedValue("numeric", num, _canonical_numeric_text(num))
    return NormalizedValue("text", None, s)


def _numeric_match(a: float, b: float, cfg: GroundingConfig) -> bool:
    d = abs(a - b)
    if d <= cfg.numeric_abs_tol:
        return True
    return d / max(abs(a), abs(b), 1e-12) <= cfg.numeric_rel_tol


def _text_match(a: str, b: str, cfg: GroundingConfig) -> bool:
    if a == b:
        return True
    if cfg.substring_text_match and a and b:
        return a in b or b in a
    return False


def values_match(a: NormalizedValue, b: NormalizedValue, cfg: GroundingConfig = DEFAULT_GROUNDING) -> bool:
    """Tolerance match for numbers, exact-or-substring match for text.

    Mixed kinds compare canonical text forms, but containment then requires
    the number to appear as a whole token of the text side: raw substring
    matching would let short numerals hit spuriously ("2" inside "12 units").
    """
    if a.kind == "numeric" and b.kind == "numeric":
        return _numeric_match(a.num, b.num, cfg)
    if a.kind == "text" and b.kind == "text":
        return _text_match(a.text, b.text, cfg)
    num, text = (a, b) if a.kind == "numeric" else (b, a)
    if num.text == text.text:
        return True
    if cfg.substring_text_match:
        return num.text in text.text.split()
    return False


@dataclass(frozen=True)
class Cell:
    raw: str
    normalized: NormalizedValue


@dataclass(frozen=True)
class Table:
    """Rectangular grid of cells with named columns.

    Construct via Table.from_strings so every cell carries its normalized
    form; the constructor enforces rectangularity and header arity.
    """

    table_id: str
    headers: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...] = field(default=())

    def __post_init__(self):
        if not self.table_id:
            raise ValueError("table_id must be nonempty")
        n_cols = len(self.headers)
        for i, row in enumerate(self.rows):
            if len(row) != n_cols:
                raise ValueError(f"row {i} has {len(row)} cells, expected {n_cols}")

    @classmethod
    def from_strings(
        cls,
        table_id: str,
        headers: list[str],
        rows: list[list[str]],
        cfg: GroundingConfig = DEFAULT_GROUNDING,
    ) -> "Table":
        cells = tuple(tuple(Cell(raw, normalize(raw, cfg)) for raw in row) for row in rows)
        return cls(table_id=table_id, headers=tuple(headers), rows=cells)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def raw_rows(self) -> list[list[str]]:
        return [[c.raw for c in row] for row in self.rows]

    def column(self, j: int) -> list[Cell]:
        return [row[j] for row in self.rows]


def table_contains(t: Table, v: NormalizedValue, cfg: GroundingConfig = DEFAULT_GROUNDING) -> bool:
    """True iff any cell matches v under values_match."""
    return any(values_match(cell.normalized, v, cfg) for row in t.rows for cell in row)


def jaccard(a: set, b: set) -> float:
    """|a n b| / |a u b|, with 0 for two empty sets."""
    if not a and not b:
        return 0.0
    union = len(a | b)
    return len(a & b) / union
