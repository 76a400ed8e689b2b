"""Dataset ingestion: JSONL schemas, referential integrity, and the
synthetic validation corpus.

All readers reject duplicates and dangling references up front; silently
dropping or repairing records is forbidden, a defective corpus must fail
loudly at ingest time.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DanglingReference, DuplicateId, SchemaError
from .table_core import Table

TASKS = ("qa", "verdict")
VERDICT_LABELS = ("entailed", "refuted", "nei")


@dataclass(frozen=True)
class Example:
    id: str
    task: str
    question: str
    table_id: str
    gold_answers: tuple[str, ...] = ()
    gold_label: str | None = None
    gold_sql: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "qa" and not self.gold_answers:
            raise ValueError(f"{self.id}: qa example needs gold answers")
        if self.task == "verdict" and self.gold_label not in VERDICT_LABELS:
            raise ValueError(f"{self.id}: verdict example needs a label")


@dataclass
class DatasetBundle:
    tables: dict = field(default_factory=dict)  # table_id -> Table
    examples: dict = field(default_factory=dict)  # id -> Example
    predictions: dict = field(default_factory=dict)  # tag -> {id -> prediction}
    sql_info: dict = field(default_factory=dict)  # id -> {"sql": str, "db_path": str|None}
    embeddings: dict = field(default_factory=dict)  # id -> raw embedding record
    scores: dict = field(default_factory=dict)  # tag -> {id -> [float]}
    judgments: list = field(default_factory=list)

    def example_ids(self) -> list[str]:
        return sorted(self.examples)

    def table_for(self, ex: Example) -> Table:
        return self.tables[ex.table_id]


# --------------------------------------------------------------------------
# jsonl plumbing
# --------------------------------------------------------------------------

def read_jsonl(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(str(path), line_no, f"invalid JSON: {e.msg}")
            if not isinstance(obj, dict):
                raise SchemaError(str(path), line_no, "record must be an object")
            out.append((line_no, obj))
    return out


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def _require(obj: dict, key: str, kind, path: str, line: int):
    if key not in obj:
        raise SchemaError(path, line, f"missing key {key!r}")
    if not isinstance(obj[key], kind):
        raise SchemaError(path, line, f"key {key!r} has wrong type")
    return obj[key]


# --------------------------------------------------------------------------
# readers
# --------------------------------------------------------------------------

def load_tables(path) -> dict:
    tables = {}
    for line_no, obj in read_jsonl(path):
        table_id = _require(obj, "table_id", str, str(path), line_no)
        headers = _require(obj, "headers", list, str(path), line_no)
        rows = _require(obj, "rows", list, str(path), line_no)
        if table_id in tables:
            raise DuplicateId(f"table {table_id!r} defined twice")
        try:
            tables[table_id] = Table.from_strings(table_id, headers, rows)
        except (ValueError, TypeError) as e:
            raise SchemaError(str(path), line_no, str(e))
    return tables


def load_examples(path, tables: dict) -> dict:
    examples = {}
    for line_no, obj in read_jsonl(path):
        ex_id = _require(obj, "id", str, str(path), line_no)
        if ex_id in examples:
            raise DuplicateId(f"example {ex_id!r} defined twice")
        table_id = _require(obj, "table_id", str, str(path), line_no)
        if table_id not in tables:
            raise DanglingReference(f"example {ex_id!r} references unknown table {table_id!r}")
        task = obj.get("task", "qa")
        try:
            examples[ex_id] = Example(
                id=ex_id,
                task=task,
                question=_require(obj, "question", str, str(path), line_no),
                table_id=table_id,
                gold_answers=tuple(obj.get("gold_answers") or ()),
                gold_label=obj.get("label"),
                gold_sql=obj.get("gold_sql"),
            )
        except ValueError as e:
            raise SchemaError(str(path), line_no, str(e))
    return examples


def load_predictions(path, examples: dict) -> dict:
    preds = {}
    for line_no, obj in read_jsonl(path):
        ex_id = _require(obj, "id", str, str(path), line_no)
        if ex_id in preds:
            raise DuplicateId(f"prediction for {ex_id!r} given twice in {path}")
        if ex_id not in examples:
            raise DanglingReference(f"prediction id {ex_id!r} matches no example")
        preds[ex_id] = _require(obj, "prediction", str, str(path), line_no)
    return preds


def load_gold_sql(path, examples: dict) -> dict:
    info = {}
    for line_no, obj in read_jsonl(path):
        ex_id = _require(obj, "id", str, str(path), line_no)
        if ex_id in info:
            raise DuplicateId(f"gold sql for {ex_id!r} given twice")
        if ex_id not in examples:
            raise DanglingReference(f"gold sql id {ex_id!r} matches no example")
        info[ex_id] = {
            "sql": _require(obj, "sql", str, str(path), line_no),
            "db_path": obj.get("db_path"),
        }
    return info


def load_embeddings(path, examples: dict) -> dict:
    out = {}
    for line_no, obj in read_jsonl(path):
        ex_id = _require(obj, "id", str, str(path), line_no)
        if ex_id in out:
            raise DuplicateId(f"embeddings for {ex_id!r} given twice")
        if ex_id not in examples:
            raise DanglingReference(f"embedding id {ex_id!r} matches no example")
        _require(obj, "question_vec", list, str(path), line_no)
        _require(obj, "row_vecs", list, str(path), line_no)
        _require(obj, "model_tag", str, str(path), line_no)
        out[ex_id] = obj
    return out


def load_scores(path, examples: dict) -> dict:
    out = {}
    for line_no, obj in read_jsonl(path):
        ex_id = _require(obj, "id", str, str(path), line_no)
        if ex_id in out:
            raise DuplicateId(f"scores for {ex_id!r} given twice")
        if ex_id not in examples:
            raise DanglingReference(f"score id {ex_id!r} matches no example")
        out[ex_id] = _require(obj, "scores", list, str(path), line_no)
    return out


def load_judgments(path) -> list:
    out = []
    for line_no, obj in read_jsonl(path):
        _require(obj, "id", str, str(path), line_no)
        _require(obj, "judge", str, str(path), line_no)
        judgment = _require(obj, "judgment", str, str(path), line_no)
        if judgment not in ("supported", "not_supported", "uncertain"):
            raise SchemaError(str(path), line_no, f"unknown judgment {judgment!r}")
        out.append(obj)
    return out


def ingest(
    tables_path,
    examples_path,
    predictions: dict | None = None,
    gold_sql_path=None,
    embeddings_path=None,
    scores: dict | None = None,
    judgments_path=None,
) -> DatasetBundle:
    """Load and cross-validate a dataset bundle.

    predictions/scores map a model tag to a JSONL path. Inline gold_sql on
    examples is merged with (and overridden by) a separate gold-SQL file.
    """
    tables = load_tables(tables_path)
    examples = load_examples(examples_path, tables)
    bundle = DatasetBundle(tables=tables, examples=examples)
    for ex_id, ex in examples.items():
        if ex.gold_sql:
            bundle.sql_info[ex_id] = {"sql": ex.gold_sql, "db_path": None}
    if gold_sql_path:
        bundle.sql_info.update(load_gold_sql(gold_sql_path, examples))
    for tag, path in sorted((predictions or {}).items()):
        bundle.predictions[tag] = load_predictions(path, examples)
    if embeddings_path:
        bundle.embeddings = load_embeddings(embeddings_path, examples)
    for tag, path in sorted((scores or {}).items()):
        bundle.scores[tag] = load_scores(path, examples)
    if judgments_path:
        bundle.judgments = load_judgments(judgments_path)
    return bundle


# --------------------------------------------------------------------------
# synthetic corpus
# --------------------------------------------------------------------------

_VOCAB = (
    "alder", "birch", "cedar", "dogwood", "elm", "fir", "ginkgo", "hazel",
    "juniper", "laurel", "maple", "oak", "pine", "rowan", "spruce", "willow",
)

_HEADER_POOL = ("name", "score", "year", "city", "rank", "points", "team", "round")

_BIASED_WORDS = ("not", "all", "most", "none", "less", "greater", "highest")


def synth_generate(n: int, seed: int = 0) -> tuple[DatasetBundle, dict]:
    """Synthetic bundle with planted answers plus a perfect prediction file.

    QA questions name a unique key cell and ask for another column in the
    same row, so the answer string always appears in exactly that row and
    the wiring checks (EM/F1 = 1.0 with echoed gold, evidence coverage = 1)
    hold by construction. Verdict labels are drawn independently of every
    statement feature, so any feature-based classifier sits at chance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    label_rng = random.Random(seed + 1)
    bundle = DatasetBundle()
    echo: dict[str, str] = {}
    for i in range(n):
        n_rows = rng.randint(3, 8)
        n_cols = rng.randint(2, 5)
        headers = [f"{_HEADER_POOL[j % len(_HEADER_POOL)]}_{j}" for j in range(n_cols)]
        rows = []
        for r in range(n_rows):
            row = [f"key_{i}_{r}"]
            for c in range(1, n_cols):
                if rng.random() < 0.5:
                    row.append(str(rng.randint(0, 9999)))
                else:
                    row.append(f"{rng.choice(_VOCAB)} {rng.choice(_VOCAB)}")
            rows.append(row)
        table_id = f"synth_table_{i}"
        bundle.tables[table_id] = Table.from_strings(table_id, headers, rows)

        target_row = rng.randrange(n_rows)
        target_col = rng.randrange(1, n_cols)
        answer = rows[target_row][target_col]
        qa_id = f"synth_qa_{i}"
        bundle.examples[qa_id] = Example(
            id=qa_id,
            task="qa",
            question=f"what is the {headers[target_col]} of key_{i}_{target_row}",
            table_id=table_id,
            gold_answers=(answer,),
        )
        echo[qa_id] = answer

        statement_words = [rng.choice(_VOCAB) for _ in range(rng.randint(4, 9))]
        if rng.random() < 0.4:
            statement_words.insert(rng.randrange(len(statement_words)), rng.choice(_BIASED_WORDS))
        verdict_id = f"synth_verdict_{i}"
        bundle.examples[verdict_id] = Example(
            id=verdict_id,
            task="verdict",
            question=" ".join(statement_words),
            table_id=table_id,
            gold_label=label_rng.choice(("entailed", "refuted")),
        )
    bundle.predictions["synth-echo"] = echo
    return bundle, echo


def write_bundle(bundle: DatasetBundle, out_dir) -> dict:
    """Write a bundle back out as JSONL files; returns the path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "tables": out / "tables.jsonl",
        "examples": out / "examples.jsonl",
    }
    write_jsonl(
        paths["tables"],
        (
            {"table_id": t.table_id, "headers": list(t.headers), "rows": t.raw_rows()}
            for _, t in sorted(bundle.tables.items())
        ),
    )

    def example_record(ex: Example) -> dict:
        rec = {"id": ex.id, "task": ex.task, "question": ex.question, "table_id": ex.table_id}
        if ex.task == "qa":
            rec["gold_answers"] = list(ex.gold_answers)
        else:
            rec["label"] = ex.gold_label
        if ex.gold_sql:
            rec["gold_sql"] = ex.gold_sql
        return rec

    write_jsonl(
        paths["examples"],
        (example_record(ex) for _, ex in sorted(bundle.examples.items())),
    )
    for tag, preds in sorted(bundle.predictions.items()):
        p = out / f"predictions_{tag}.jsonl"
        paths[f"predictions:{tag}"] = p
        write_jsonl(p, ({"id": k, "prediction": v} for k, v in sorted(preds.items())))
    return paths
