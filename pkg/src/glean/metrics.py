"""QA metrics, bootstrap intervals, classifier/agreement metrics, and the
surface-feature artifact detector.

EM/F1 use the conventional QA normalization: casefold, punctuation strip,
English article strip, whitespace collapse. The normalization is recorded in
the run manifest so scores are comparable across runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMarginals, IdMismatch, SingleClass
from .table_core import Table, jaccard, parse_numeric, word_tokens

BIAS_WORDS = ("not", "all", "most", "none", "less", "greater", "highest")

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_RE = re.compile(r"[^\w\s]")


def qa_normalize(s: str) -> str:
    s = s.casefold()
    s = _PUNCT_RE.sub(" ", s)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def em(pred: str, gold: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold answer."""
    if not gold:
        raise ValueError("gold answers must be nonempty")
    p = qa_normalize(pred)
    return int(any(p == qa_normalize(g) for g in gold))


def _bag_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = 0
    counts: dict[str, int] = {}
    for t in gold_tokens:
        counts[t] = counts.get(t, 0) + 1
    for t in pred_tokens:
        if counts.get(t, 0) > 0:
            counts[t] -= 1
            common += 1
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, gold: list[str]) -> float:
    """Token-bag F1, max over the gold answer list."""
    if not gold:
        raise ValueError("gold answers must be nonempty")
    p = qa_normalize(pred).split()
    return max(_bag_f1(p, qa_normalize(g).split()) for g in gold)


@dataclass(frozen=True)
class MetricBlock:
    em: float
    f1: float
    n: int
    ci_em: tuple[float, float]
    ci_f1: tuple[float, float]
    ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "f1": self.f1,
            "n": self.n,
            "ci_em": list(self.ci_em),
            "ci_f1": list(self.ci_f1),
        }


def bootstrap_ci(
    values: list[float], resamples: int = 1000, level: float = 0.95, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap of the mean; deterministic given seed."""
    if not values:
        raise ValueError("values must be nonempty")
    arr = np.asarray(values, dtype=float)
    if arr.min() == arr.max():
        return (float(arr[0]), float(arr[0]))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(arr), size=(resamples, len(arr)))
    means = arr[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return (float(lo), float(hi))


def evaluate_predictions(
    preds: dict[str, str], golds: dict[str, list[str]], seed: int = 0
) -> tuple[MetricBlock, dict[str, dict]]:
    """Score predictions against gold answers over the intersection of ids.

    Returns the aggregate block plus per-example records (used by the
    stratified reports and probe deltas). Ids are sorted before reduction so
    the result is order-independent.
    """
    ids = sorted(set(preds) & set(golds))
    if not ids:
        raise IdMismatch("no overlapping ids between predictions and gold")
    per_example = {}
    ems, f1s = [], []
    for ex_id in ids:
        e = em(preds[ex_id], golds[ex_id])
        f = token_f1(preds[ex_id], golds[ex_id])
        per_example[ex_id] = {"em": e, "f1": f}
        ems.append(float(e))
        f1s.append(f)
    block = MetricBlock(
        em=sum(ems) / len(ems),
        f1=sum(f1s) / len(f1s),
        n=len(ids),
        ci_em=bootstrap_ci(ems, seed=seed),
        ci_f1=bootstrap_ci(f1s, seed=seed),
        ids=tuple(ids),
    )
    return block, per_example


# --------------------------------------------------------------------------
# classifier metrics
# --------------------------------------------------------------------------

def classifier_metrics(scores: list[float], labels: list[int]) -> dict:
    """Accuracy at 0.5, AUROC (midrank Mann-Whitney), AUPRC (average
    precision with tied-score groups), and positive rate."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("both classes must be present")
    acc = float(((s >= 0.5).astype(int) == y).mean())

    # midrank AUROC
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=float)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    auroc = float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

    # average precision over distinct-score thresholds
    desc = np.argsort(-s, kind="stable")
    tp = 0
    fp = 0
    ap = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(desc):
        j = i
        group_tp = 0
        group_fp = 0
        while j < len(desc) and s[desc[j]] == s[desc[i]]:
            if y[desc[j]] == 1:
                group_tp += 1
            else:
                group_fp += 1
            j += 1
        tp += group_tp
        fp += group_fp
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return {"acc": acc, "auroc": auroc, "auprc": float(ap), "pos_rate": n_pos / len(y)}


def cohen_kappa(a: list, b: list) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
    if len(a) != len(b) or not a:
        raise IdMismatch("label lists must be nonempty and aligned")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    labels = set(a) | set(b)
    p_e = sum((a.count(k) / n) * (b.count(k) / n) for k in labels)
    if p_e == 1.0:
        raise DegenerateMarginals("expected agreement is 1; kappa undefined")
    return (p_o - p_e) / (1.0 - p_e)


# --------------------------------------------------------------------------
# artifact detector
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ArtifactFeatures:
    """11 surface/metadata slots: token overlap, numeric overlap, table size,
    and 7 bias-word indicators. No table content beyond tokens is used."""

    jaccard_overlap: float
    numeric_overlap: float
    n_rows: int
    n_cols: int
    bias_indicators: tuple[int, ...]

    def to_vector(self) -> list[float]:
        return [
            self.jaccard_overlap,
            self.numeric_overlap,
            float(self.n_rows),
            float(self.n_cols),
            *[float(x) for x in self.bias_indicators],
        ]


def _table_token_set(t: Table) -> set[str]:
    toks: set[str] = set()
    for h in t.headers:
        toks.update(word_tokens(h))
    for row in t.rows:
        for cell in row:
            toks.update(word_tokens(cell.normalized.text))
    return toks


def extract_features(ex, t: Table) -> ArtifactFeatures:
    stmt_tokens = set(word_tokens(ex.question))
    table_tokens = _table_token_set(t)
    stmt_numeric = {tok for tok in stmt_tokens if parse_numeric(tok) is not None}
    table_numeric = {tok for tok in table_tokens if parse_numeric(tok) is not None}
    indicators = tuple(int(w in stmt_tokens) for w in BIAS_WORDS)
    return ArtifactFeatures(
        jaccard_overlap=jaccard(stmt_tokens, table_tokens),
        numeric_overlap=jaccard(stmt_numeric, table_numeric),
        n_rows=t.n_rows,
        n_cols=t.n_cols,
        bias_indicators=indicators,
    )


@dataclass
class LinearModel:
    weights: np.ndarray  # n_features
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    trained_on: str = ""
    epochs: int = 0
    lr: float = 0.0


def train_linear(
    features: list[list[float]],
    labels: list[int],
    lr: float = 0.5,
    epochs: int = 500,
    seed: int = 0,
    trained_on: str = "",
) -> LinearModel:
    """Logistic regression by full-batch gradient descent.

    Features are standardized internally (zero-variance slots pass through);
    the standardization statistics are stored in the model so predict() sees
    the same scaling. Zero init makes the fit deterministic; the seed is kept
    for interface stability.
    """
    if not features:
        raise ValueError("features must be nonempty")
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds[stds == 0.0] = 1.0
    Xs = (X - means) / stds
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        z = Xs @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = Xs.T @ (p - y) / n
        grad_b = float((p - y).mean())
        w -= lr * grad_w
        b -= lr * grad_b
    return LinearModel(
        weights=w,
        bias=b,
        feature_means=means,
        feature_stds=stds,
        trained_on=trained_on,
        epochs=epochs,
        lr=lr,
    )


def predict(model: LinearModel, features: list[list[float]]) -> list[float]:
    X = np.asarray(features, dtype=float)
    Xs = (X - model.feature_means) / model.feature_stds
    z = Xs @ model.weights + model.bias
    return [float(v) for v in 1.0 / (1.0 + np.exp(-z))]
