"""Labeling-function execution, governance metrics, and LF-triggered
contrast sets.

LFs are data-declared regex rules (never arbitrary code) so a catalog can be
audited by reading one JSONL file. Gold labels are used only to score the
LFs, never to train on their outputs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import BadPattern, IdMismatch

ABSTAIN = "abstain"

BIAS_STRIP_WORDS = ("not", "all", "most", "none")

COMPARATOR_SWAPS = {
    "more": "less",
    "less": "more",
    "higher": "lower",
    "lower": "higher",
    "greater": "smaller",
    "smaller": "greater",
    "most": "least",
    "least": "most",
}

LOW_COVERAGE_THRESHOLD = 0.25


@dataclass(frozen=True)
class LabelingFunction:
    name: str
    pattern: str
    emit: str
    scope: str = "statement"  # statement | table | both

    def compiled(self) -> re.Pattern:
        try:
            return re.compile(self.pattern, re.IGNORECASE)
        except re.error as e:
            raise BadPattern(f"LF {self.name}: {e}") from e


def load_lf_catalog(path=None) -> list[LabelingFunction]:
    if path is None:
        text = resources.files("glean").joinpath("data/lf_catalog.jsonl").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    lfs = []
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        lf = LabelingFunction(d["name"], d["pattern"], d["emit"], d.get("scope", "statement"))
        lf.compiled()  # BadPattern surfaces at load time
        lfs.append(lf)
    return lfs


def _scope_text(lf: LabelingFunction, statement: str, table_text: str) -> str:
    if lf.scope == "statement":
        return statement
    if lf.scope == "table":
        return table_text
    return statement + "\n" + table_text


def apply_lfs(
    lfs: list[LabelingFunction],
    statements: list[tuple[str, str]],
    table_texts: dict[str, str] | None = None,
) -> list[list[str]]:
    """Label matrix (example x LF) with values in labels + {abstain}.

    statements is a list of (example_id, statement); table_texts supplies the
    serialized table per example id for table/both-scoped LFs.
    """
    if not lfs:
        raise ValueError("LF list must be nonempty")
    compiled = [(lf, lf.compiled()) for lf in lfs]
    table_texts = table_texts or {}
    matrix = []
    for ex_id, statement in statements:
        row = []
        for lf, pattern in compiled:
            text = _scope_text(lf, statement, table_texts.get(ex_id, ""))
            row.append(lf.emit if pattern.search(text) else ABSTAIN)
        matrix.append(row)
    return matrix


@dataclass(frozen=True)
class GovernanceReport:
    coverage: float
    conflict_rate: float
    abstention_rate: float
    lf_accuracy: float | None  # pooled agreement with gold on voted rows
    per_lf: dict
    diagnostic_only: bool

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "conflict_rate": self.conflict_rate,
            "abstention_rate": self.abstention_rate,
            "lf_accuracy": self.lf_accuracy,
            "per_lf": self.per_lf,
            "diagnostic_only": self.diagnostic_only,
        }


def governance_report(
    matrix: list[list[str]],
    lfs: list[LabelingFunction],
    gold: list[str] | None = None,
) -> GovernanceReport:
    """Coverage, conflict, abstention, and per-LF accuracy from a matrix.

    coverage + abstention = 1 exactly; the conflict rate is over covered
    examples only. Low-coverage reports carry the diagnostic-only flag.
    """
    n = len(matrix)
    if n == 0:
        raise ValueError("matrix must be nonempty")
    covered = 0
    conflicted = 0
    for row in matrix:
        votes = {v for v in row if v != ABSTAIN}
        if votes:
            covered += 1
            if len(votes) > 1:
                conflicted += 1
    coverage = covered / n
    conflict_rate = conflicted / covered if covered else 0.0

    per_lf = {}
    pooled_hits = 0
    pooled_votes = 0
    for j, lf in enumerate(lfs):
        votes = [(i, matrix[i][j]) for i in range(n) if matrix[i][j] != ABSTAIN]
        entry = {"coverage": len(votes) / n, "n_votes": len(votes), "accuracy": None}
        if gold is not None and votes:
            hits = sum(1 for i, v in votes if v == gold[i])
            entry["accuracy"] = hits / len(votes)
            pooled_hits += hits
            pooled_votes += len(votes)
        per_lf[lf.name] = entry
    lf_accuracy = pooled_hits / pooled_votes if pooled_votes else None
    return GovernanceReport(
        coverage=coverage,
        conflict_rate=conflict_rate,
        abstention_rate=1.0 - coverage,
        lf_accuracy=lf_accuracy,
        per_lf=per_lf,
        diagnostic_only=coverage < LOW_COVERAGE_THRESHOLD,
    )


# --------------------------------------------------------------------------
# contrast sets
# --------------------------------------------------------------------------

def _match_case(template: str, replacement: str) -> str:
    if template.isupper():
        return replacement.upper()
    if template[:1].isupper():
        return replacement.capitalize()
    return replacement


def _transform_statement(statement: str, kind: str) -> str:
    tokens = re.split(r"(\W+)", statement)
    out = []
    for tok in tokens:
        low = tok.casefold()
        if kind == "bias_strip" and low in BIAS_STRIP_WORDS:
            out.append("")
        elif kind == "comparator_swap" and low in COMPARATOR_SWAPS:
            out.append(_match_case(tok, COMPARATOR_SWAPS[low]))
        else:
            out.append(tok)
    collapsed = "".join(out)
    return " ".join(collapsed.split())


def contrast_set(
    examples: list[tuple[str, str]], kind: str
) -> tuple[list[tuple[str, str]], set[str]]:
    """Perturbed (id, statement) pairs plus the set of triggered ids.

    bias_strip drops whole-token bias words; comparator_swap exchanges the
    fixed comparator pairs in a single pass (so swaps never cascade).
    """
    if kind not in ("bias_strip", "comparator_swap"):
        raise ValueError(f"unknown contrast kind {kind!r}")
    out = []
    triggered = set()
    for ex_id, statement in examples:
        new_statement = _transform_statement(statement, kind)
        if new_statement != " ".join(statement.split()):
            triggered.add(ex_id)
        out.append((ex_id, new_statement))
    return out, triggered


def flip_rate(before: dict[str, str], after: dict[str, str], mask: set[str]) -> float:
    """Fraction of triggered examples whose prediction changed."""
    if not mask:
        return 0.0
    missing = [i for i in mask if i not in before or i not in after]
    if missing:
        raise IdMismatch(f"predictions missing for triggered ids: {sorted(missing)[:5]}")
    flips = sum(1 for i in mask if before[i] != after[i])
    return flips / len(mask)
