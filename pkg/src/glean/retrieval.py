"""Row-level retrievers, Recall@K, and token-budgeted context construction.

Sparse scoring functions are self-contained (no index shared across tables)
because the retrieval unit is a single table's rows. BM25 parameters are the
canonical k1=1.2, b=0.75; the field-aware variant weights the header field at
0.5 against 1.0 for cells, with per-field length normalization. All rankings
break ties by ascending row index so results are reproducible.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .errors import DimensionMismatch, EmptyEvidence, RowSetMismatch
from .evidence import EvidenceSet
from .table_core import Table, TokenBudget, count_tokens, jaccard, word_tokens

BM25_K1 = 1.2
BM25_B = 0.75
BM25F_FIELD_WEIGHTS = {"header": 0.5, "cell": 1.0}
RRF_K = 60

RETRIEVER_KINDS = ("tfidf", "bm25", "bm25f", "cell_bm25")


@dataclass(frozen=True)
class RowDocument:
    row_index: int
    tokens: tuple[str, ...]
    field_tokens: dict  # field -> tuple of tokens

    @property
    def cell_token_lists(self) -> tuple[tuple[str, ...], ...]:
        return self.field_tokens["cells_split"]


@dataclass(frozen=True)
class Ranking:
    retriever: str
    order: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.order) != len(self.scores):
            raise ValueError("order and scores must be parallel")
        if len(set(self.order)) != len(self.order):
            raise ValueError("duplicate row indices in ranking")

    def rank_of(self, row: int) -> int:
        """1-based position of a row."""
        return self.order.index(row) + 1


def _make_ranking(name: str, scores: list[float]) -> Ranking:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return Ranking(name, tuple(order), tuple(scores[i] for i in order))


@dataclass(frozen=True)
class EmbeddingTable:
    model_tag: str
    question_vec: tuple[float, ...]
    row_vecs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        dim = len(self.question_vec)
        for v in self.row_vecs:
            if len(v) != dim:
                raise DimensionMismatch(f"row vector dim {len(v)} != question dim {dim}")
        for v in (self.question_vec, *self.row_vecs):
            if any(not math.isfinite(x) for x in v):
                raise ValueError("embedding vectors must be finite")


def build_row_docs(t: Table) -> list[RowDocument]:
    header_tokens = tuple(tok for h in t.headers for tok in word_tokens(h))
    docs = []
    for i, row in enumerate(t.rows):
        per_cell = tuple(tuple(word_tokens(c.normalized.text)) for c in row)
        cell_tokens = tuple(tok for cell in per_cell for tok in cell)
        docs.append(
            RowDocument(
                row_index=i,
                tokens=header_tokens + cell_tokens,
                field_tokens={
                    "header": header_tokens,
                    "cell": cell_tokens,
                    "cells_split": per_cell,
                },
            )
        )
    return docs


# --------------------------------------------------------------------------
# sparse scoring
# --------------------------------------------------------------------------

def _bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def _bm25_scores(query_terms: list[str], doc_tokens: list[tuple[str, ...]]) -> list[float]:
    n = len(doc_tokens)
    tfs = [Counter(toks) for toks in doc_tokens]
    lens = [len(toks) for toks in doc_tokens]
    avgdl = sum(lens) / n if n else 0.0
    df = Counter()
    for tf in tfs:
        df.update(tf.keys())
    scores = []
    for tf, dl in zip(tfs, lens):
        s = 0.0
        for term in query_terms:
            f = tf.get(term, 0)
            if f == 0:
                continue
            idf = _bm25_idf(n, df[term])
            norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl)
            s += idf * f * (BM25_K1 + 1.0) / (f + norm)
        scores.append(s)
    return scores


def _tfidf_scores(query_terms: list[str], doc_tokens: list[tuple[str, ...]]) -> list[float]:
    n = len(doc_tokens)
    tfs = [Counter(toks) for toks in doc_tokens]
    df = Counter()
    for tf in tfs:
        df.update(tf.keys())

    def idf(term: str) -> float:
        return math.log((n + 1.0) / (df.get(term, 0) + 1.0))

    q_tf = Counter(query_terms)
    q_vec = {t: math.log(1.0 + c) * idf(t) for t, c in q_tf.items()}
    q_norm = math.sqrt(sum(v * v for v in q_vec.values()))
    scores = []
    for tf in tfs:
        d_vec = {t: math.log(1.0 + c) * idf(t) for t, c in tf.items()}
        d_norm = math.sqrt(sum(v * v for v in d_vec.values()))
        if q_norm == 0.0 or d_norm == 0.0:
            scores.append(0.0)
            continue
        dot = sum(q_vec[t] * d_vec[t] for t in q_vec.keys() & d_vec.keys())
        scores.append(dot / (q_norm * d_norm))
    return scores


def _bm25f_scores(query_terms: list[str], docs: list[RowDocument]) -> list[float]:
    n = len(docs)
    fields = ("header", "cell")
    field_tfs = {f: [Counter(d.field_tokens[f]) for d in docs] for f in fields}
    field_lens = {f: [len(d.field_tokens[f]) for d in docs] for f in fields}
    field_avg = {f: (sum(field_lens[f]) / n if n else 0.0) for f in fields}
    df = Counter()
    for d in docs:
        df.update(set(d.tokens))
    scores = []
    for i in range(n):
        s = 0.0
        for term in set(query_terms):
            weighted_tf = 0.0
            for f in fields:
                tf = field_tfs[f][i].get(term, 0)
                if tf == 0 or field_avg[f] == 0.0:
                    continue
                b_norm = 1.0 - BM25_B + BM25_B * field_lens[f][i] / field_avg[f]
                weighted_tf += BM25F_FIELD_WEIGHTS[f] * tf / b_norm
            if weighted_tf == 0.0:
                continue
            s += _bm25_idf(n, df[term]) * weighted_tf * (BM25_K1 + 1.0) / (weighted_tf + BM25_K1)
        scores.append(s)
    return scores


def _cell_bm25_scores(query_terms: list[str], docs: list[RowDocument]) -> list[float]:
    # every cell is a micro-document; a row scores as its best cell
    cells = []
    owner = []
    for d in docs:
        for cell_toks in d.cell_token_lists:
            cells.append(cell_toks)
            owner.append(d.row_index)
    if not cells:
        return [0.0] * len(docs)
    cell_scores = _bm25_scores(query_terms, cells)
    best = [0.0] * len(docs)
    for score, row in zip(cell_scores, owner):
        if score > best[row]:
            best[row] = score
    return best


def rank(q_tokens: list[str], docs: list[RowDocument], kind: str) -> Ranking:
    """Full ranking over all rows under one of the four sparse schemes.

    Repeated query terms count once for the BM25 family; TF-IDF uses
    ln(1+tf) * ln((N+1)/(df+1)) weights with cosine scoring.
    """
    if not docs:
        raise ValueError("docs must be nonempty")
    if kind == "bm25":
        terms = sorted(set(q_tokens))
        scores = _bm25_scores(terms, [d.tokens for d in docs])
    elif kind == "tfidf":
        scores = _tfidf_scores(list(q_tokens), [d.tokens for d in docs])
    elif kind == "bm25f":
        scores = _bm25f_scores(list(q_tokens), docs)
    elif kind == "cell_bm25":
        terms = sorted(set(q_tokens))
        scores = _cell_bm25_scores(terms, docs)
    else:
        raise ValueError(f"unknown retriever kind {kind!r}")
    return _make_ranking(kind, scores)


def rank_dense(emb: EmbeddingTable) -> Ranking:
    """Rows by descending cosine similarity to the question vector."""
    q = emb.question_vec
    q_norm = math.sqrt(sum(x * x for x in q))
    scores = []
    for v in emb.row_vecs:
        v_norm = math.sqrt(sum(x * x for x in v))
        if q_norm == 0.0 or v_norm == 0.0:
            scores.append(0.0)
            continue
        scores.append(sum(a * b for a, b in zip(q, v)) / (q_norm * v_norm))
    return _make_ranking(f"dense:{emb.model_tag}", scores)


def rank_from_scores(name: str, scores: list[float]) -> Ranking:
    """Adopt externally produced per-row scores (reranker files)."""
    return _make_ranking(name, list(scores))


def fuse_hybrid(a: Ranking, b: Ranking, k: int = RRF_K) -> Ranking:
    """Reciprocal-rank fusion: score(r) = 1/(k+rank_a) + 1/(k+rank_b)."""
    if set(a.order) != set(b.order):
        raise RowSetMismatch("rankings cover different row sets")
    pos_a = {r: i + 1 for i, r in enumerate(a.order)}
    pos_b = {r: i + 1 for i, r in enumerate(b.order)}
    n = len(a.order)
    scores = [0.0] * n
    for r in a.order:
        scores[r] = 1.0 / (k + pos_a[r]) + 1.0 / (k + pos_b[r])
    return _make_ranking(f"rrf({a.retriever},{b.retriever})", scores)


def rank_sql_gold(evidence: EvidenceSet, n_rows: int) -> Ranking:
    """Oracle retriever: evidence rows first (ascending), then the rest."""
    if any(r < 0 or r >= n_rows for r in evidence.rows):
        raise ValueError("evidence rows out of range")
    ev = sorted(evidence.rows)
    rest = [i for i in range(n_rows) if i not in evidence.rows]
    order = ev + rest
    scores = [1.0] * len(ev) + [0.0] * len(rest)
    return Ranking("sql_gold", tuple(order), tuple(scores))


# --------------------------------------------------------------------------
# recall and stratification
# --------------------------------------------------------------------------

def recall_at_k(rank_: Ranking, evidence: EvidenceSet, ks: list[int]) -> dict[int, int]:
    """hit@k = 1 iff any evidence row appears in the top k."""
    if not evidence.rows:
        raise EmptyEvidence("recall is undefined without evidence rows")
    out = {}
    for k in ks:
        out[k] = int(any(r in evidence.rows for r in rank_.order[:k]))
    return out


def first_hit_rank(rank_: Ranking, evidence: EvidenceSet) -> int | None:
    """1-based rank of the first evidence row, None when never retrieved."""
    for i, r in enumerate(rank_.order, start=1):
        if r in evidence.rows:
            return i
    return None


_BUCKETS = ("1", "2", "3-5", "6-10", "miss")


def _bucket(hit_rank: int | None) -> str:
    if hit_rank is None or hit_rank > 10:
        return "miss"
    if hit_rank == 1:
        return "1"
    if hit_rank == 2:
        return "2"
    if hit_rank <= 5:
        return "3-5"
    return "6-10"


def hit_rank_stratify(records: list[dict]) -> dict:
    """Mean EM/F1 for the hit@1 stratum vs the never-hit stratum, plus
    first-hit-rank buckets. Each record carries hit_rank, em, f1."""
    if not records:
        raise ValueError("records must be nonempty")

    def summarize(group: list[dict]) -> dict:
        if not group:
            return {"n": 0, "em": None, "f1": None}
        return {
            "n": len(group),
            "em": sum(r["em"] for r in group) / len(group),
            "f1": sum(r["f1"] for r in group) / len(group),
        }

    buckets = {name: [] for name in _BUCKETS}
    for r in records:
        buckets[_bucket(r["hit_rank"])].append(r)
    return {
        "hit_at_1": summarize([r for r in records if r["hit_rank"] == 1]),
        "miss": summarize([r for r in records if r["hit_rank"] is None]),
        "buckets": {name: summarize(group) for name, group in buckets.items()},
    }


# --------------------------------------------------------------------------
# budgeted context construction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PrunedContext:
    table: Table  # kept rows (original order) x kept columns
    kept_rows: tuple[int, ...]  # original row indices, ascending
    selected_order: tuple[int, ...]  # row indices in the order they were added
    kept_cols: tuple[int, ...]
    token_count: int
    oversize: bool
    evidence_survived: frozenset[int] | None = None


def _row_cost(t: Table, i: int) -> int:
    return sum(count_tokens(c.raw) for c in t.rows[i])


def budget_prune(
    t: Table,
    rank_: Ranking,
    q_tokens: list[str],
    budget: TokenBudget,
    evidence: EvidenceSet | None = None,
) -> PrunedContext:
    """Greedily add rows in rank order until the token budget is reached,
    then keep the max_cols columns with the highest question overlap.

    At least one row is always included; a first row that alone exceeds the
    budget is kept and flagged oversize (the serialization layer truncates
    the context string, the row still counts as included).
    """
    if set(rank_.order) != set(range(t.n_rows)):
        raise ValueError("ranking must cover exactly the table's rows")
    selected: list[int] = []
    total = 0
    oversize = False
    for r in rank_.order:
        cost = _row_cost(t, r)
        if not selected and cost > budget.max_table_tokens:
            selected.append(r)
            total = cost
            oversize = True
            break
        if total + cost > budget.max_table_tokens:
            break
        selected.append(r)
        total += cost
    kept_rows = tuple(sorted(selected))

    if t.n_cols > budget.max_cols:
        q_set = set(q_tokens)

        def col_overlap(j: int) -> float:
            toks = set(word_tokens(t.headers[j]))
            for i in kept_rows:
                toks.update(word_tokens(t.rows[i][j].normalized.text))
            return jaccard(q_set, toks)

        ranked_cols = sorted(range(t.n_cols), key=lambda j: (-col_overlap(j), j))
        kept_cols = tuple(sorted(ranked_cols[: budget.max_cols]))
    else:
        kept_cols = tuple(range(t.n_cols))

    pruned = Table(
        f"{t.table_id}__pruned",
        tuple(t.headers[j] for j in kept_cols),
        tuple(tuple(t.rows[i][j] for j in kept_cols) for i in kept_rows),
    )
    survived = None
    if evidence is not None:
        survived = frozenset(evidence.rows & set(kept_rows))
    return PrunedContext(
        table=pruned,
        kept_rows=kept_rows,
        selected_order=tuple(selected),
        kept_cols=kept_cols,
        token_count=total,
        oversize=oversize,
        evidence_survived=survived,
    )


_TOKEN_SPAN_RE = re.compile(r"\w+|[^\w\s]")


def truncate_tokens(s: str, max_tokens: int) -> str:
    """Cut a string after its max_tokens-th token (used for oversize rows)."""
    count = 0
    for m in _TOKEN_SPAN_RE.finditer(s):
        count += 1
        if count == max_tokens:
            return s[: m.end()]
    return s
