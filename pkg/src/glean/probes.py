"""Contamination probes: seeded table/question transforms plus canary and
n-gram overlap scoring.

Every transform is deterministic given (seed, example id); per-example RNG
state is derived by hashing, so parallel execution order can never change
outputs.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable

from .errors import CanaryCollision, DuplicateHeader, IdMismatch, NoSwapPossible, NoTemplateMatch
from .metrics import MetricBlock
from .table_core import Table, tokenize

PROBE_KINDS = (
    "canary",
    "ngram_overlap",
    "entity_swap",
    "paraphrase",
    "row_permute",
    "col_permute",
    "schema_rename",
    "counterfactual_swap",
)


def derive_rng(global_seed: int, *keys: str) -> random.Random:
    """Stable per-item RNG: hash-seeded, independent of process hash salt."""
    payload = "\x1f".join([str(global_seed), *keys]).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class PerturbedExample:
    source_id: str
    probe: str
    question: str
    table_id: str
    label_preserving_claim: str  # preserving | stress | unknown
    table: Table | None = None  # set when the probe produced a new table
    detail: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# structural table transforms
# --------------------------------------------------------------------------

def permute(t: Table, axis: str, seed: int) -> tuple[Table, tuple[int, ...]]:
    """Seeded row or column permutation; returns (table, permutation).

    permutation[i] gives the source index now at position i, so applying the
    inverse restores the original exactly.
    """
    if axis not in ("rows", "cols"):
        raise ValueError(f"axis must be rows or cols, got {axis!r}")
    n = t.n_rows if axis == "rows" else t.n_cols
    order = list(range(n))
    derive_rng(seed, t.table_id, axis).shuffle(order)
    perm = tuple(order)
    new_id = f"{t.table_id}__{'rowperm' if axis == 'rows' else 'colperm'}_s{seed}"
    if axis == "rows":
        rows = tuple(t.rows[i] for i in perm)
        return Table(new_id, t.headers, rows), perm
    headers = tuple(t.headers[j] for j in perm)
    rows = tuple(tuple(row[j] for j in perm) for row in t.rows)
    return Table(new_id, headers, rows), perm


def invert_permutation(perm: tuple[int, ...]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def rename_schema(t: Table, mode: str, mapping: dict[str, str] | None = None) -> Table:
    """Generic mode yields col_1..col_n; map mode applies a partial rename."""
    if mode == "generic":
        headers = tuple(f"col_{j + 1}" for j in range(t.n_cols))
    elif mode == "synonym-map":
        mapping = mapping or {}
        headers = tuple(mapping.get(h, h) for h in t.headers)
        if len(set(headers)) != len(headers):
            raise DuplicateHeader(f"rename produces duplicate headers: {headers}")
    else:
        raise ValueError(f"unknown rename mode {mode!r}")
    return Table(f"{t.table_id}__rename_{mode}", headers, t.rows)


# --------------------------------------------------------------------------
# question-entity transforms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Mention:
    start: int
    end: int
    raw: str  # cell raw string (stripped)
    row: int
    col: int


def _find_mentions(question: str, t: Table) -> list[_Mention]:
    """Cell values mentioned verbatim (casefolded) in the question.

    Text values need >= 3 chars and match by containment; numeric values
    require exact token equality so short numbers cannot hit substrings.
    Longest-match-first, then by position, then by (row, col).
    """
    q_cf = question.casefold()
    q_token_spans = [(m.start(), m.end(), m.group(0)) for m in re.finditer(r"\w+", q_cf)]
    mentions: list[_Mention] = []
    for i, row in enumerate(t.rows):
        for j, cell in enumerate(row):
            raw = cell.raw.strip()
            if not raw:
                continue
            if cell.normalized.kind == "numeric":
                raw_cf = raw.casefold()
                for s, e, tok in q_token_spans:
                    if tok == raw_cf:
                        mentions.append(_Mention(s, e, raw, i, j))
            elif len(raw) >= 3:
                needle = raw.casefold()
                start = q_cf.find(needle)
                while start != -1:
                    mentions.append(_Mention(start, start + len(needle), raw, i, j))
                    start = q_cf.find(needle, start + 1)
    mentions.sort(key=lambda m: (-(m.end - m.start), m.start, m.row, m.col))
    return mentions


def _select_nonoverlapping(mentions: list[_Mention]) -> list[_Mention]:
    taken: list[_Mention] = []
    for m in mentions:
        if all(m.end <= o.start or m.start >= o.end for o in taken):
            taken.append(m)
    taken.sort(key=lambda m: m.start)
    return taken


def counterfactual_swap(ex, t: Table, seed: int) -> PerturbedExample:
    """Replace the longest question-mentioned cell value with a different
    value drawn (seeded) from the same column. Always a stress probe."""
    mentions = _find_mentions(ex.question, t)
    if not mentions:
        raise NoSwapPossible(f"{ex.id}: no question token matches any cell")
    best = mentions[0]
    column_values = []
    seen = set()
    for cell in t.column(best.col):
        raw = cell.raw.strip()
        key = raw.casefold()
        if raw and key != best.raw.casefold() and key not in seen:
            seen.add(key)
            column_values.append(raw)
    if not column_values:
        raise NoSwapPossible(f"{ex.id}: column {best.col} has no second distinct value")
    rng = derive_rng(seed, ex.id, "counterfactual_swap")
    replacement = rng.choice(sorted(column_values))
    pattern = re.escape(best.raw)
    if t.rows[best.row][best.col].normalized.kind == "numeric":
        pattern = r"(?<!\w)" + pattern + r"(?!\w)"
    new_q = re.sub(pattern, replacement.replace("\\", "\\\\"), ex.question, flags=re.IGNORECASE)
    return PerturbedExample(
        source_id=ex.id,
        probe="counterfactual_swap",
        question=new_q,
        table_id=t.table_id,
        label_preserving_claim="stress",
        detail={"replaced": best.raw, "replacement": replacement, "column": best.col},
    )


def entity_swap(ex, t: Table, seed: int) -> PerturbedExample:
    """Exchange the two earliest question-mentioned entities; table untouched."""
    selected = _select_nonoverlapping(_find_mentions(ex.question, t))
    # the two earliest by position with distinct surface forms
    pair = None
    for i in range(len(selected)):
        for j in range(i + 1, len(selected)):
            if selected[i].raw.casefold() != selected[j].raw.casefold():
                pair = (selected[i], selected[j])
                break
        if pair:
            break
    if pair is None:
        raise NoSwapPossible(f"{ex.id}: fewer than two distinct entities mentioned")
    a, b = pair
    q = ex.question
    new_q = q[: a.start] + q[b.start : b.end] + q[a.end : b.start] + q[a.start : a.end] + q[b.end :]
    return PerturbedExample(
        source_id=ex.id,
        probe="entity_swap",
        question=new_q,
        table_id=t.table_id,
        label_preserving_claim="unknown",
        detail={"swapped": [q[a.start : a.end], q[b.start : b.end]]},
    )


# --------------------------------------------------------------------------
# paraphrase templates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParaphraseTemplate:
    name: str
    pattern: str
    rewrite: str


def load_paraphrase_catalog(path=None) -> list[ParaphraseTemplate]:
    if path is None:
        text = resources.files("glean").joinpath("data/paraphrase_catalog.jsonl").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    catalog = []
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        catalog.append(ParaphraseTemplate(d["name"], d["pattern"], d["rewrite"]))
    return catalog


def paraphrase(ex, catalog: list[ParaphraseTemplate], seed: int = 0) -> PerturbedExample:
    """Apply the first matching template; earliest in catalog order wins."""
    if not catalog:
        raise ValueError("paraphrase catalog must be nonempty")
    for tpl in catalog:
        if re.search(tpl.pattern, ex.question):
            new_q = re.sub(tpl.pattern, tpl.rewrite, ex.question, count=1)
            return PerturbedExample(
                source_id=ex.id,
                probe="paraphrase",
                question=new_q,
                table_id=ex.table_id,
                label_preserving_claim="preserving",
                detail={"template": tpl.name},
            )
    raise NoTemplateMatch(f"{ex.id}: no template matches")


# --------------------------------------------------------------------------
# canary
# --------------------------------------------------------------------------

def inject_canary(ex, t: Table, canary: str, seed: int = 0) -> PerturbedExample:
    """Plant the canary in an extra column of a seeded row.

    The column keeps the table rectangular; the manifest records the canary
    so detect_canary can later scan prediction files for it.
    """
    if not canary:
        raise ValueError("canary must be nonempty")
    if canary in ex.question or any(canary in c.raw for row in t.rows for c in row):
        raise CanaryCollision(f"{ex.id}: canary already present")
    if t.n_rows == 0:
        raise ValueError("cannot plant a canary in a table with no rows")
    header = "note"
    suffix = 2
    while header in t.headers:
        header = f"note_{suffix}"
        suffix += 1
    target = derive_rng(seed, ex.id, "canary").randrange(t.n_rows)
    new_table = Table.from_strings(
        f"{t.table_id}__canary_s{seed}",
        list(t.headers) + [header],
        [
            row + [canary if i == target else ""]
            for i, row in enumerate(t.raw_rows())
        ],
    )
    return PerturbedExample(
        source_id=ex.id,
        probe="canary",
        question=ex.question,
        table_id=new_table.table_id,
        label_preserving_claim="preserving",
        table=new_table,
        detail={"canary": canary, "row": target},
    )


def table_has_canary(t: Table, canary: str) -> bool:
    return any(canary in c.raw for row in t.rows for c in row)


def detect_canary(canary: str, items: Iterable[tuple[str, str]]) -> list[str]:
    """Ids whose text contains the canary, in input order."""
    return [item_id for item_id, text in items if canary in text]


# --------------------------------------------------------------------------
# n-gram overlap
# --------------------------------------------------------------------------

def build_ngram_index(texts: Iterable[str], n: int) -> set[str]:
    if n < 1:
        raise ValueError("n must be >= 1")
    index: set[str] = set()
    for text in texts:
        toks = tokenize(text)
        for i in range(len(toks) - n + 1):
            index.add(" ".join(toks[i : i + n]))
    return index


def ngram_overlap(text: str, index: set[str], n: int) -> float:
    """Fraction of the text's token n-grams present in the index; 0 when the
    text has fewer than n tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    toks = tokenize(text)
    if len(toks) < n:
        return 0.0
    grams = [" ".join(toks[i : i + n]) for i in range(len(toks) - n + 1)]
    hits = sum(1 for g in grams if g in index)
    return hits / len(grams)


# --------------------------------------------------------------------------
# metric deltas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaReport:
    metrics: dict  # name -> {"before": x, "after": y, "delta": y - x}

    def delta(self, name: str) -> float:
        return self.metrics[name]["delta"]


def probe_delta(before: MetricBlock, after: MetricBlock) -> DeltaReport:
    """Signed per-metric differences (after - before) over id-aligned sets."""
    if before.ids and after.ids and set(before.ids) != set(after.ids):
        raise IdMismatch("metric blocks computed on different example sets")
    out = {}
    for name in ("em", "f1"):
        b = getattr(before, name)
        a = getattr(after, name)
        out[name] = {"before": b, "after": a, "delta": a - b}
    return DeltaReport(out)
