"""Evidence-row identification (answer-string, sql, hybrid), coverage, and
detector validation against SQL-derived gold rows."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import IdMismatch, NotSimple
from .sql_anchor import SqlQuery, classify_simple, eval_where
from .table_core import (
    DEFAULT_GROUNDING,
    GroundingConfig,
    Table,
    jaccard,
    normalize,
    values_match,
    word_tokens,
)

DEFAULT_OVERLAP_THRESHOLD = 0.2


@dataclass(frozen=True)
class EvidenceSet:
    mode: str  # answer_string | sql | hybrid
    rows: frozenset[int]
    type_flags: int = 0  # comparisons that mixed numeric and text operands

    @property
    def covered(self) -> bool:
        return bool(self.rows)


def detect_answer_rows(
    t: Table, gold: list[str], cfg: GroundingConfig = DEFAULT_GROUNDING
) -> EvidenceSet:
    """Rows whose cells contain any normalized gold value (union semantics:
    any gold value grounds a row)."""
    if not gold:
        raise ValueError("gold answers must be nonempty")
    targets = [normalize(g, cfg) for g in gold]
    rows = frozenset(
        i
        for i, row in enumerate(t.rows)
        if any(values_match(cell.normalized, v, cfg) for cell in row for v in targets)
    )
    return EvidenceSet(mode="answer_string", rows=rows)


def derive_sql_rows(t: Table, sql: SqlQuery) -> EvidenceSet:
    """Row ids selected by the WHERE clause of a simple query (all rows when
    there is no WHERE). Aggregation, grouping, and opaque constructs raise
    NotSimple."""
    if not classify_simple(sql):
        raise NotSimple(sql.opaque_reason or "query has aggregation or grouping")
    matched, flags = eval_where(sql, t)
    return EvidenceSet(mode="sql", rows=frozenset(matched), type_flags=flags)


def _row_token_set(t: Table, i: int) -> set[str]:
    toks: set[str] = set()
    for h, cell in zip(t.headers, t.rows[i]):
        toks.update(word_tokens(h))
        toks.update(word_tokens(cell.normalized.text))
    return toks


def detect_hybrid(
    t: Table,
    ex,
    cfg: GroundingConfig = DEFAULT_GROUNDING,
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> EvidenceSet:
    """Answer-string rows plus high question-overlap rows; when both come up
    empty, fall back to the single max-overlap row so coverage is always 1."""
    base: frozenset[int] = frozenset()
    if getattr(ex, "gold_answers", None):
        base = detect_answer_rows(t, ex.gold_answers, cfg).rows
    q_tokens = set(word_tokens(ex.question))
    overlaps = [jaccard(q_tokens, _row_token_set(t, i)) for i in range(t.n_rows)]
    rows = set(base)
    rows.update(i for i, ov in enumerate(overlaps) if ov >= threshold)
    if not rows and t.n_rows:
        best = max(range(t.n_rows), key=lambda i: (overlaps[i], -i))
        rows.add(best)
    return EvidenceSet(mode="hybrid", rows=frozenset(rows))


def evidence_coverage(sets: list[EvidenceSet]) -> float:
    if not sets:
        raise ValueError("evidence sets must be nonempty")
    return sum(1 for s in sets if s.covered) / len(sets)


def validate_detector(
    pred: dict[str, EvidenceSet], gold: dict[str, EvidenceSet]
) -> dict[str, float]:
    """Micro-averaged row-level precision/recall; a true positive is a row
    present in both sets for the same example."""
    if set(pred) != set(gold):
        raise IdMismatch("prediction and gold evidence must cover the same ids")
    tp = fp = fn = 0
    for ex_id in pred:
        p_rows = pred[ex_id].rows
        g_rows = gold[ex_id].rows
        tp += len(p_rows & g_rows)
        fp += len(p_rows - g_rows)
        fn += len(g_rows - p_rows)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {"precision": precision, "recall": recall}
