"""Deterministic error labeling over {OK, L0, L0.5, L1, L2, L3, L4}.

Rule order is fixed: a failed oracle first (nothing else is evaluable), then
the success check before the empty check (so a genuinely empty gold cannot
be mislabeled), then context miss, then the grounding split. The trace of
fired/skipped rules is recorded per example so any label can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MissingOracle
from .table_core import (
    DEFAULT_GROUNDING,
    GroundingConfig,
    Table,
    normalize,
    table_contains,
    values_match,
)

LABELS = ("OK", "L0", "L0_5", "L1", "L2", "L3", "L4")

# rule name -> label it assigns when fired
_RULES = (
    ("sql_exec_error", "L1"),
    ("oracle_match", "OK"),
    ("empty_prediction", "L0"),
    ("context_miss", "L0_5"),
    ("gold_grounded_pred_not", "L2"),
    ("both_grounded", "L3"),
    ("neither_grounded", "L4"),
    ("pred_grounded_gold_not", "L4"),
)


@dataclass(frozen=True)
class RetrievalInfo:
    evidence_rows: frozenset[int]
    survived_rows: frozenset[int]


@dataclass(frozen=True)
class AttributionRecord:
    example_id: str
    label: str
    rule_trace: tuple[str, ...]
    oracle_source: str  # sql | gold_answer


def attribute(
    pred: str,
    oracle: list[str],
    t: Table,
    retrieval: RetrievalInfo | None = None,
    sql_status: str | None = None,
    cfg: GroundingConfig = DEFAULT_GROUNDING,
    example_id: str = "",
    oracle_source: str = "gold_answer",
) -> AttributionRecord:
    """First matching rule wins; exactly one label per example."""
    if sql_status != "exec_error" and not oracle:
        raise MissingOracle(f"{example_id}: oracle answers required")

    pred_norm = normalize(pred, cfg)
    oracle_norm = [normalize(o, cfg) for o in oracle]

    def fired(name: str) -> bool:
        if name == "sql_exec_error":
            return sql_status == "exec_error"
        if name == "oracle_match":
            return any(values_match(pred_norm, o, cfg) for o in oracle_norm)
        if name == "empty_prediction":
            return pred.strip() == ""
        if name == "context_miss":
            return (
                retrieval is not None
                and bool(retrieval.evidence_rows)
                and not (retrieval.evidence_rows & retrieval.survived_rows)
            )
        gold_grounded = any(table_contains(t, o, cfg) for o in oracle_norm)
        pred_grounded = table_contains(t, pred_norm, cfg)
        if name == "gold_grounded_pred_not":
            return gold_grounded and not pred_grounded
        if name == "both_grounded":
            return pred_grounded and gold_grounded
        if name == "neither_grounded":
            return not pred_grounded and not gold_grounded
        # pred_grounded_gold_not: the gold required computation beyond any
        # cell; binned L4 and visible in the trace so reports can re-bin it
        return pred_grounded and not gold_grounded

    trace = []
    label = None
    for name, rule_label in _RULES:
        if label is None and fired(name):
            trace.append(f"{name}:fire")
            label = rule_label
        else:
            trace.append(f"{name}:skip")
    assert label is not None  # rules 5-8 partition the grounding plane
    return AttributionRecord(
        example_id=example_id,
        label=label,
        rule_trace=tuple(trace),
        oracle_source=oracle_source,
    )


def label_from_trace(trace: tuple[str, ...]) -> str:
    """Reconstruct the label from a rule trace (replay check)."""
    rule_labels = dict(_RULES)
    for entry in trace:
        name, _, outcome = entry.partition(":")
        if outcome == "fire":
            return rule_labels[name]
    raise ValueError("trace contains no fired rule")


def attribution_distribution(
    records: list[AttributionRecord], subset_ids: set[str] | None = None
) -> dict[str, float]:
    """Per-label shares summing to 1, optionally restricted to an id subset
    (e.g. the SQL exact-match examples)."""
    pool = records if subset_ids is None else [r for r in records if r.example_id in subset_ids]
    if not pool:
        raise ValueError("no records to aggregate")
    counts = {label: 0 for label in LABELS}
    for r in pool:
        counts[r.label] += 1
    return {label: counts[label] / len(pool) for label in LABELS}


@dataclass(frozen=True)
class AttributionCase:
    """One example's attribution inputs, for grounding-sensitivity sweeps."""

    example_id: str
    pred: str
    oracle: tuple[str, ...]
    table: Table
    retrieval: RetrievalInfo | None = None
    sql_status: str | None = None
    oracle_source: str = "gold_answer"


def sensitivity_sweep(
    cases: list[AttributionCase], configs: list[GroundingConfig]
) -> dict:
    """Label distribution per grounding configuration plus the min/max band
    per label across configurations."""
    if len(configs) < 2:
        raise ValueError("need at least two grounding configurations")
    per_config = []
    for cfg in configs:
        records = [
            attribute(
                c.pred,
                list(c.oracle),
                c.table,
                retrieval=c.retrieval,
                sql_status=c.sql_status,
                cfg=cfg,
                example_id=c.example_id,
                oracle_source=c.oracle_source,
            )
            for c in cases
        ]
        per_config.append(attribution_distribution(records))
    band = {
        label: (min(d[label] for d in per_config), max(d[label] for d in per_config))
        for label in LABELS
    }
    return {"distributions": per_config, "band": band}
