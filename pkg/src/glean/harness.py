"""Run orchestration: stage execution over an ingested bundle, report and
plot emission, and the provenance verifier.

Determinism contract: identical (manifest, inputs) produce byte-identical
outputs regardless of worker count. Everything is keyed and reduced in
sorted id order, the report contains no timestamps, and per-example work is
pure, so a thread pool can only change scheduling, never results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sqlite3
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import attribution as attr_mod
from . import evidence as evidence_mod
from . import governance as gov_mod
from . import metrics as metrics_mod
from . import probes as probes_mod
from . import retrieval as retrieval_mod
from . import serialization
from . import sql_anchor
from .dataset import DatasetBundle, Example, ingest, write_jsonl
from .errors import GleanError, NotSimple
from .table_core import GroundingConfig, DEFAULT_GROUNDING, TokenBudget, tokenize

TOOL_VERSION = "0.1.0"

FAIL_SOFT_THRESHOLD = 0.05

DEFAULT_KS = (1, 2, 5, 10)


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("GLEAN_WORKERS")
    return max(1, int(env)) if env else 1


def map_items(fn, items, workers: int):
    """Order-preserving parallel map; output is identical to sequential."""
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce a run byte for byte."""

    run_id: str
    global_seed: int = 0
    dataset_tag: str = ""
    tables_path: str = ""
    examples_path: str = ""
    prediction_paths: dict = field(default_factory=dict)  # tag -> path
    gold_sql_path: str | None = None
    embeddings_path: str | None = None
    score_paths: dict = field(default_factory=dict)
    judgments_path: str | None = None
    grounding: dict = field(default_factory=lambda: DEFAULT_GROUNDING.to_dict())
    budget: dict = field(default_factory=lambda: {"max_table_tokens": 1024, "max_cols": 16})
    retriever: str = "bm25"
    evidence_mode: str = "answer"  # answer | sql | hybrid
    ks: list = field(default_factory=lambda: list(DEFAULT_KS))
    probe_kinds: list = field(default_factory=list)
    canary: str = ""
    serialization_format: str = "markdown"
    stages: dict = field(default_factory=dict)  # stage name -> bool override
    token_scheme: str = "whitespace+punctuation"
    tool_version: str = TOOL_VERSION
    input_digests: dict = field(default_factory=dict)

    def stage_enabled(self, name: str) -> bool:
        return self.stages.get(name, True)

    def grounding_config(self) -> GroundingConfig:
        return GroundingConfig.from_dict(self.grounding)

    def token_budget(self) -> TokenBudget:
        return TokenBudget(**self.budget)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def input_paths(self) -> dict:
        paths = {"tables": self.tables_path, "examples": self.examples_path}
        for tag, p in sorted(self.prediction_paths.items()):
            paths[f"predictions:{tag}"] = p
        if self.gold_sql_path:
            paths["gold_sql"] = self.gold_sql_path
        if self.embeddings_path:
            paths["embeddings"] = self.embeddings_path
        for tag, p in sorted(self.score_paths.items()):
            paths[f"scores:{tag}"] = p
        if self.judgments_path:
            paths["judgments"] = self.judgments_path
        return paths


@dataclass
class RunResult:
    report: dict
    out_dir: Path
    errors: list
    exit_code: int


def _ingest_from_manifest(manifest: RunManifest) -> DatasetBundle:
    return ingest(
        manifest.tables_path,
        manifest.examples_path,
        predictions=manifest.prediction_paths,
        gold_sql_path=manifest.gold_sql_path,
        embeddings_path=manifest.embeddings_path,
        scores=manifest.score_paths,
        judgments_path=manifest.judgments_path,
    )


# --------------------------------------------------------------------------
# per-stage helpers (each pure per example; used by run() and the CLI)
# --------------------------------------------------------------------------

def detect_evidence(bundle: DatasetBundle, ex: Example, mode: str, cfg: GroundingConfig):
    t = bundle.table_for(ex)
    if mode == "answer":
        if not ex.gold_answers:
            return evidence_mod.EvidenceSet(mode="answer_string", rows=frozenset())
        return evidence_mod.detect_answer_rows(t, list(ex.gold_answers), cfg)
    if mode == "sql":
        info = bundle.sql_info.get(ex.id)
        if not info:
            return evidence_mod.EvidenceSet(mode="sql", rows=frozenset())
        try:
            q = sql_anchor.parse_sql(info["sql"])
            return evidence_mod.derive_sql_rows(t, q)
        except (NotSimple, GleanError):
            return evidence_mod.EvidenceSet(mode="sql", rows=frozenset())
    if mode == "hybrid":
        return evidence_mod.detect_hybrid(t, ex, cfg)
    raise ValueError(f"unknown evidence mode {mode!r}")


def rank_rows(bundle: DatasetBundle, ex: Example, retriever: str, evidence=None):
    t = bundle.table_for(ex)
    q_tokens = tokenize(ex.question)
    if retriever in retrieval_mod.RETRIEVER_KINDS:
        docs = retrieval_mod.build_row_docs(t)
        return retrieval_mod.rank(q_tokens, docs, retriever)
    if retriever == "dense":
        rec = bundle.embeddings.get(ex.id)
        if rec is None:
            raise GleanError(f"{ex.id}: no embeddings for dense retrieval")
        emb = retrieval_mod.EmbeddingTable(
            model_tag=rec["model_tag"],
            question_vec=tuple(rec["question_vec"]),
            row_vecs=tuple(tuple(v) for v in rec["row_vecs"]),
        )
        if len(emb.row_vecs) != t.n_rows:
            raise GleanError(f"{ex.id}: embedding rows != table rows")
        return retrieval_mod.rank_dense(emb)
    if retriever == "sql_gold":
        if evidence is None or evidence.mode != "sql":
            raise GleanError(f"{ex.id}: sql_gold retriever needs sql evidence")
        return retrieval_mod.rank_sql_gold(evidence, t.n_rows)
    if retriever.startswith("scores:"):
        tag = retriever.split(":", 1)[1]
        per_row = bundle.scores.get(tag, {}).get(ex.id)
        if per_row is None or len(per_row) != t.n_rows:
            raise GleanError(f"{ex.id}: missing or misaligned score file {tag!r}")
        return retrieval_mod.rank_from_scores(retriever, per_row)
    if retriever.startswith("hybrid:"):
        a_kind, _, b_kind = retriever.split(":", 1)[1].partition("+")
        a = rank_rows(bundle, ex, a_kind, evidence)
        b = rank_rows(bundle, ex, b_kind, evidence)
        return retrieval_mod.fuse_hybrid(a, b)
    raise ValueError(f"unknown retriever {retriever!r}")


def sql_oracle_record(bundle: DatasetBundle, ex: Example, cfg: GroundingConfig) -> dict:
    """Execute gold SQL for one example and compare the denotation."""
    info = bundle.sql_info[ex.id]
    t = bundle.table_for(ex)
    q = sql_anchor.parse_sql(info["sql"])
    table_name = q.from_table or sql_anchor.table_name_from_raw(info["sql"])
    if info.get("db_path"):
        conn = sqlite3.connect(info["db_path"])
    else:
        conn = sql_anchor.build_database(t, table_name)
    try:
        result = sql_anchor.execute_gold(conn, q)
    finally:
        conn.close()
    rec = {
        "id": ex.id,
        "status": result.status,
        "denotation": list(result.denotation),
        "error": result.error_msg,
        "simple": sql_anchor.classify_simple(q),
        "gold_rows": None,
        "exact": None,
        "soft": None,
        "category": None,
    }
    if rec["simple"] and not info.get("db_path"):
        rec["gold_rows"] = sorted(evidence_mod.derive_sql_rows(t, q).rows)
    if result.status == "ok" and ex.gold_answers:
        verdict = sql_anchor.compare_denotation(list(result.denotation), list(ex.gold_answers), cfg)
        rec.update(exact=verdict.exact, soft=verdict.soft, category=verdict.category)
    return rec


def apply_probe(bundle: DatasetBundle, ex: Example, kind: str, seed: int, canary: str,
                paraphrase_catalog=None):
    t = bundle.table_for(ex)
    if kind == "row_permute":
        new_t, perm = probes_mod.permute(t, "rows", seed)
        return probes_mod.PerturbedExample(
            ex.id, kind, ex.question, new_t.table_id, "preserving", new_t,
            {"permutation": list(perm)},
        )
    if kind == "col_permute":
        new_t, perm = probes_mod.permute(t, "cols", seed)
        return probes_mod.PerturbedExample(
            ex.id, kind, ex.question, new_t.table_id, "preserving", new_t,
            {"permutation": list(perm)},
        )
    if kind == "schema_rename":
        new_t = probes_mod.rename_schema(t, "generic")
        return probes_mod.PerturbedExample(
            ex.id, kind, ex.question, new_t.table_id, "preserving", new_t, {}
        )
    if kind == "counterfactual_swap":
        return probes_mod.counterfactual_swap(ex, t, seed)
    if kind == "entity_swap":
        return probes_mod.entity_swap(ex, t, seed)
    if kind == "paraphrase":
        catalog = paraphrase_catalog or probes_mod.load_paraphrase_catalog()
        return probes_mod.paraphrase(ex, catalog, seed)
    if kind == "canary":
        return probes_mod.inject_canary(ex, t, canary or f"CANARY-{seed:08x}", seed)
    raise ValueError(f"unknown probe kind {kind!r}")


# --------------------------------------------------------------------------
# the full run
# --------------------------------------------------------------------------

def run(manifest: RunManifest, out_dir, workers: int | None = None) -> RunResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_workers = worker_count(workers)
    cfg = manifest.grounding_config()
    budget = manifest.token_budget()
    errors: list[dict] = []

    digests = {name: file_digest(p) for name, p in manifest.input_paths().items()}
    for name, digest in manifest.input_digests.items():
        if name in digests and digests[name] != digest:
            raise GleanError(f"input {name} digest mismatch against manifest")
    manifest.input_digests = digests
    manifest.save(out / "manifest.json")

    bundle = _ingest_from_manifest(manifest)
    qa_ids = [i for i in bundle.example_ids() if bundle.examples[i].task == "qa"]
    verdict_ids = [i for i in bundle.example_ids() if bundle.examples[i].task == "verdict"]

    report: dict = {
        "run_id": manifest.run_id,
        "tool_version": manifest.tool_version,
        "dataset_tag": manifest.dataset_tag,
        "counts": {
            "tables": len(bundle.tables),
            "examples": len(bundle.examples),
            "qa": len(qa_ids),
            "verdict": len(verdict_ids),
        },
        "config": {
            "grounding": manifest.grounding,
            "budget": manifest.budget,
            "retriever": manifest.retriever,
            "evidence_mode": manifest.evidence_mode,
            "ks": list(manifest.ks),
            "seed": manifest.global_seed,
            "token_scheme": manifest.token_scheme,
        },
        "provenance": {"inputs": digests, "stage_files": {}},
    }

    def soft(stage: str, ex_id: str, fn):
        try:
            return fn()
        except GleanError as e:
            errors.append({"id": ex_id, "stage": stage, "error": str(e)})
            return None

    stage_files = report["provenance"]["stage_files"]

    # ---- evidence ----------------------------------------------------------
    evidence_by_id: dict = {}
    if manifest.stage_enabled("evidence"):
        results = map_items(
            lambda ex_id: soft(
                "evidence",
                ex_id,
                lambda: detect_evidence(bundle, bundle.examples[ex_id], manifest.evidence_mode, cfg),
            ),
            qa_ids,
            n_workers,
        )
        records = []
        for ex_id, ev in zip(qa_ids, results):
            if ev is None:
                continue
            evidence_by_id[ex_id] = ev
            records.append(
                {"id": ex_id, "mode": ev.mode, "rows": sorted(ev.rows), "covered": ev.covered}
            )
        write_jsonl(out / "evidence.jsonl", records)
        stage_files["evidence"] = "evidence.jsonl"
        if evidence_by_id:
            report["evidence"] = {
                "mode": manifest.evidence_mode,
                "coverage": evidence_mod.evidence_coverage(list(evidence_by_id.values())),
                "n": len(evidence_by_id),
            }

    # ---- retrieval + pruning + requests ------------------------------------
    hit_rank_by_id: dict = {}
    survived_by_id: dict = {}
    if manifest.stage_enabled("retrieval"):
        def retrieve_one(ex_id: str):
            ex = bundle.examples[ex_id]
            ev = evidence_by_id.get(ex_id)
            ranking = rank_rows(bundle, ex, manifest.retriever, ev)
            pruned = retrieval_mod.budget_prune(
                bundle.table_for(ex), ranking, tokenize(ex.question), budget, ev
            )
            hits = None
            hit_rank = None
            if ev is not None and ev.covered:
                hits = retrieval_mod.recall_at_k(ranking, ev, list(manifest.ks))
                hit_rank = retrieval_mod.first_hit_rank(ranking, ev)
            context = serialization.emit(pruned.table, manifest.serialization_format)
            if pruned.oversize:
                context = retrieval_mod.truncate_tokens(context, budget.max_table_tokens)
            return ranking, pruned, hits, hit_rank, context

        results = map_items(
            lambda ex_id: soft("retrieval", ex_id, lambda: retrieve_one(ex_id)),
            qa_ids,
            n_workers,
        )
        ranking_records, pruned_records, request_records, recall_records = [], [], [], []
        recall_acc = {k: [] for k in manifest.ks}
        for ex_id, res in zip(qa_ids, results):
            if res is None:
                continue
            ranking, pruned, hits, hit_rank, context = res
            hit_rank_by_id[ex_id] = hit_rank
            survived_by_id[ex_id] = pruned.evidence_survived
            ranking_records.append(
                {
                    "id": ex_id,
                    "retriever": ranking.retriever,
                    "order": list(ranking.order),
                    "scores": list(ranking.scores),
                }
            )
            pruned_records.append(
                {
                    "id": ex_id,
                    "kept_rows": list(pruned.kept_rows),
                    "selected_order": list(pruned.selected_order),
                    "kept_cols": list(pruned.kept_cols),
                    "token_count": pruned.token_count,
                    "oversize": pruned.oversize,
                    "evidence_survived": sorted(pruned.evidence_survived)
                    if pruned.evidence_survived is not None
                    else None,
                }
            )
            request_records.append(
                {"id": ex_id, "question": bundle.examples[ex_id].question, "context": context}
            )
            if hits is not None:
                recall_records.append({"id": ex_id, "hits": {str(k): v for k, v in hits.items()},
                                       "hit_rank": hit_rank})
                for k in manifest.ks:
                    recall_acc[k].append(hits[k])
        write_jsonl(out / "rankings.jsonl", ranking_records)
        write_jsonl(out / "pruned.jsonl", pruned_records)
        write_jsonl(out / "requests.jsonl", request_records)
        write_jsonl(out / "recall.jsonl", recall_records)
        stage_files.update(
            retrieval="rankings.jsonl", pruning="pruned.jsonl",
            requests="requests.jsonl", recall="recall.jsonl",
        )
        if any(recall_acc.values()):
            report["retrieval"] = {
                "retriever": manifest.retriever,
                "recall_at_k": {
                    str(k): (sum(v) / len(v) if v else None) for k, v in sorted(recall_acc.items())
                },
                "n_covered": len(next(iter(recall_acc.values()))),
            }

    # ---- sql oracle ---------------------------------------------------------
    sql_records: dict = {}
    if manifest.stage_enabled("sql") and bundle.sql_info:
        ids = [i for i in bundle.example_ids() if i in bundle.sql_info]
        results = map_items(
            lambda ex_id: soft(
                "sql", ex_id, lambda: sql_oracle_record(bundle, bundle.examples[ex_id], cfg)
            ),
            ids,
            n_workers,
        )
        recs = [r for r in results if r is not None]
        sql_records = {r["id"]: r for r in recs}
        write_jsonl(out / "sql_oracle.jsonl", recs)
        stage_files["sql"] = "sql_oracle.jsonl"
        verdict_pairs = [
            (r["status"], sql_anchor.MatchVerdict(r["exact"], r["soft"], r["category"])
             if r["exact"] is not None else None)
            for r in recs
        ]
        if verdict_pairs:
            acct = sql_anchor.accounting(verdict_pairs)
            sql_em = [
                metrics_mod.em(" ".join(r["denotation"]), list(bundle.examples[r["id"]].gold_answers))
                for r in recs
                if r["status"] == "ok" and bundle.examples[r["id"]].gold_answers
            ]
            report["sql_oracle"] = acct.to_dict()
            report["sql_oracle"]["sql_target_em"] = (
                sum(sql_em) / len(sql_em) if sql_em else None
            )
            mismatch_pairs = [
                (r["denotation"], list(bundle.examples[r["id"]].gold_answers))
                for r in recs
                if r["status"] == "ok" and r["exact"] is False
            ]
            if mismatch_pairs:
                report["sql_oracle"]["tolerance_ablation"] = sql_anchor.tolerance_ablation(
                    mismatch_pairs, base_cfg=cfg
                )
        # detector validation on the simple subset
        gold_sets = {
            r["id"]: evidence_mod.EvidenceSet(mode="sql", rows=frozenset(r["gold_rows"]))
            for r in recs
            if r["gold_rows"]
        }
        if gold_sets:
            pred_sets = {
                ex_id: evidence_mod.detect_answer_rows(
                    bundle.table_for(bundle.examples[ex_id]),
                    list(bundle.examples[ex_id].gold_answers),
                    cfg,
                )
                for ex_id in sorted(gold_sets)
                if bundle.examples[ex_id].gold_answers
            }
            shared = {k: gold_sets[k] for k in pred_sets}
            if shared:
                report["detector_validation"] = {
                    "n": len(shared),
                    "simple_sql_coverage": len(gold_sets) / len(bundle.sql_info),
                    **evidence_mod.validate_detector(pred_sets, shared),
                }

    # ---- metrics ------------------------------------------------------------
    per_example_scores: dict = {}
    if manifest.stage_enabled("metrics") and bundle.predictions:
        report["metrics"] = {}
        for tag in sorted(bundle.predictions):
            preds = bundle.predictions[tag]
            qa_golds = {
                i: list(bundle.examples[i].gold_answers) for i in qa_ids if i in preds
            }
            entry: dict = {}
            if qa_golds:
                block, per_ex = metrics_mod.evaluate_predictions(
                    {i: preds[i] for i in qa_golds}, qa_golds, seed=manifest.global_seed
                )
                per_example_scores[tag] = per_ex
                entry["qa"] = block.to_dict()
                strata_records = [
                    {"hit_rank": hit_rank_by_id.get(i), "em": s["em"], "f1": s["f1"]}
                    for i, s in sorted(per_ex.items())
                    if i in hit_rank_by_id
                ]
                if strata_records:
                    entry["hit_rank_strata"] = retrieval_mod.hit_rank_stratify(strata_records)
            v_ids = [i for i in verdict_ids if i in preds]
            if v_ids:
                hits = [
                    int(preds[i].strip().casefold() == bundle.examples[i].gold_label)
                    for i in v_ids
                ]
                entry["verdict_accuracy"] = sum(hits) / len(hits)
            report["metrics"][tag] = entry
        stage_files["metrics"] = "report.json#metrics"

    # ---- attribution --------------------------------------------------------
    if manifest.stage_enabled("attribution") and bundle.predictions:
        report["attribution"] = {}
        for tag in sorted(bundle.predictions):
            preds = bundle.predictions[tag]
            ids = [i for i in qa_ids if i in preds]

            def attribute_one(ex_id: str):
                ex = bundle.examples[ex_id]
                sql_rec = sql_records.get(ex_id)
                if sql_rec is not None:
                    sql_status = sql_rec["status"]
                    if sql_status == "ok" and sql_rec["denotation"]:
                        oracle = list(sql_rec["denotation"])
                        source = "sql"
                    else:
                        oracle = list(ex.gold_answers)
                        source = "gold_answer"
                else:
                    sql_status = None
                    oracle = list(ex.gold_answers)
                    source = "gold_answer"
                retrieval_info = None
                ev = evidence_by_id.get(ex_id)
                survived = survived_by_id.get(ex_id)
                if ev is not None and survived is not None:
                    retrieval_info = attr_mod.RetrievalInfo(
                        evidence_rows=frozenset(ev.rows), survived_rows=frozenset(survived)
                    )
                return attr_mod.attribute(
                    preds[ex_id],
                    oracle,
                    bundle.table_for(ex),
                    retrieval=retrieval_info,
                    sql_status=sql_status,
                    cfg=cfg,
                    example_id=ex_id,
                    oracle_source=source,
                )

            results = map_items(
                lambda ex_id: soft("attribution", ex_id, lambda: attribute_one(ex_id)),
                ids,
                n_workers,
            )
            records = [r for r in results if r is not None]
            write_jsonl(
                out / f"attribution_{tag}.jsonl",
                (
                    {
                        "id": r.example_id,
                        "label": r.label,
                        "rule_trace": list(r.rule_trace),
                        "oracle_source": r.oracle_source,
                    }
                    for r in records
                ),
            )
            stage_files[f"attribution:{tag}"] = f"attribution_{tag}.jsonl"
            if records:
                entry = {"distribution": attr_mod.attribution_distribution(records)}
                exact_ids = {i for i, r in sql_records.items() if r.get("exact")}
                if exact_ids & {r.example_id for r in records}:
                    entry["distribution_sql_match_only"] = attr_mod.attribution_distribution(
                        records, subset_ids=exact_ids
                    )
                report["attribution"][tag] = entry

    # ---- probes -------------------------------------------------------------
    if manifest.stage_enabled("probes") and manifest.probe_kinds:
        catalog = probes_mod.load_paraphrase_catalog()
        probe_records, probe_tables = [], {}
        for kind in sorted(manifest.probe_kinds):
            results = map_items(
                lambda ex_id: soft(
                    f"probe:{kind}",
                    ex_id,
                    lambda: apply_probe(
                        bundle, bundle.examples[ex_id], kind, manifest.global_seed,
                        manifest.canary, catalog,
                    ),
                ),
                qa_ids,
                n_workers,
            )
            for ex_id, p in zip(qa_ids, results):
                if p is None:
                    continue
                probe_records.append(
                    {
                        "source_id": p.source_id,
                        "probe": p.probe,
                        "question": p.question,
                        "table_id": p.table_id,
                        "claim": p.label_preserving_claim,
                    }
                )
                if p.table is not None:
                    probe_tables[p.table.table_id] = p.table
        write_jsonl(out / "probes.jsonl", probe_records)
        write_jsonl(
            out / "probe_tables.jsonl",
            (
                {"table_id": t.table_id, "headers": list(t.headers), "rows": t.raw_rows()}
                for _, t in sorted(probe_tables.items())
            ),
        )
        stage_files["probes"] = "probes.jsonl"

        # metric deltas for any '<tag>@<probe>' prediction files
        deltas = {}
        for tag in sorted(bundle.predictions):
            if "@" not in tag:
                continue
            base_tag, _, probe_kind = tag.partition("@")
            if base_tag not in bundle.predictions:
                continue
            after_preds = bundle.predictions[tag]
            base_preds = bundle.predictions[base_tag]
            shared = sorted(
                set(after_preds) & set(base_preds)
                & {i for i in qa_ids if bundle.examples[i].gold_answers}
            )
            if not shared:
                continue
            golds = {i: list(bundle.examples[i].gold_answers) for i in shared}
            before_block, _ = metrics_mod.evaluate_predictions(
                {i: base_preds[i] for i in shared}, golds, seed=manifest.global_seed
            )
            after_block, _ = metrics_mod.evaluate_predictions(
                {i: after_preds[i] for i in shared}, golds, seed=manifest.global_seed
            )
            deltas[tag] = {
                "probe": probe_kind,
                "n": len(shared),
                **probes_mod.probe_delta(before_block, after_block).metrics,
            }
        if deltas:
            report["probe_deltas"] = deltas

    # ---- governance ---------------------------------------------------------
    if manifest.stage_enabled("governance") and verdict_ids:
        lfs = gov_mod.load_lf_catalog()
        statements = [(i, bundle.examples[i].question) for i in verdict_ids]
        matrix = gov_mod.apply_lfs(lfs, statements)
        gold = [bundle.examples[i].gold_label for i in verdict_ids]
        gov_report = gov_mod.governance_report(matrix, lfs, gold)
        report["governance"] = gov_report.to_dict()
        contrast_out = {}
        for kind in ("bias_strip", "comparator_swap"):
            perturbed, triggered = gov_mod.contrast_set(statements, kind)
            write_jsonl(
                out / f"contrast_{kind}.jsonl",
                (
                    {"id": i, "statement": s, "triggered": i in triggered}
                    for i, s in perturbed
                ),
            )
            entry: dict = {"triggered": len(triggered), "n": len(perturbed)}
            for tag in sorted(bundle.predictions):
                contrast_tag = f"{tag}@contrast_{kind}"
                if contrast_tag in bundle.predictions:
                    before = bundle.predictions[tag]
                    after = bundle.predictions[contrast_tag]
                    usable = {i for i in triggered if i in before and i in after}
                    entry[f"flip_rate:{tag}"] = gov_mod.flip_rate(before, after, usable)
            contrast_out[kind] = entry
        report["contrast_sets"] = contrast_out
        stage_files["governance"] = "report.json#governance"

    # ---- agreement ----------------------------------------------------------
    if bundle.judgments:
        by_judge: dict = {}
        for j in bundle.judgments:
            key = (j["id"], j.get("row"))
            by_judge.setdefault(j["judge"], {})[key] = j["judgment"]
        kappas = {}
        judges = sorted(by_judge)
        for i in range(len(judges)):
            for j in range(i + 1, len(judges)):
                shared = sorted(set(by_judge[judges[i]]) & set(by_judge[judges[j]]),
                                key=lambda k: (k[0], str(k[1])))
                if len(shared) < 2:
                    continue
                a = [by_judge[judges[i]][k] for k in shared]
                b = [by_judge[judges[j]][k] for k in shared]
                try:
                    kappas[f"{judges[i]}|{judges[j]}"] = {
                        "kappa": metrics_mod.cohen_kappa(a, b),
                        "n": len(shared),
                    }
                except GleanError:
                    kappas[f"{judges[i]}|{judges[j]}"] = {"kappa": None, "n": len(shared)}
        if kappas:
            report["audit_agreement"] = kappas

    # ---- finalize -----------------------------------------------------------
    n_units = max(1, len(bundle.examples))
    fail_rate = len(errors) / n_units
    report["errors"] = {"count": len(errors), "rate": fail_rate}
    write_jsonl(out / "errors.jsonl", errors)

    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    _write_markdown_summary(report, out / "report.md")
    emit_plots(report, out / "plots")

    exit_code = 2 if fail_rate > FAIL_SOFT_THRESHOLD else 0
    return RunResult(report=report, out_dir=out, errors=errors, exit_code=exit_code)


# --------------------------------------------------------------------------
# report emission
# --------------------------------------------------------------------------

def _write_markdown_summary(report: dict, path) -> None:
    lines = [f"# Run {report['run_id']}", ""]
    counts = report["counts"]
    lines.append(
        f"{counts['examples']} examples over {counts['tables']} tables "
        f"({counts['qa']} qa / {counts['verdict']} verdict)."
    )
    if "metrics" in report:
        lines += ["", "## QA metrics", "", "| model | EM | F1 | n |", "|---|---|---|---|"]
        for tag, entry in sorted(report["metrics"].items()):
            if "qa" in entry:
                q = entry["qa"]
                lines.append(f"| {tag} | {q['em']:.3f} | {q['f1']:.3f} | {q['n']} |")
    if "retrieval" in report:
        r = report["retrieval"]
        recall = ", ".join(f"R@{k}={v:.3f}" for k, v in sorted(r["recall_at_k"].items(), key=lambda kv: int(kv[0])) if v is not None)
        lines += ["", f"## Retrieval ({r['retriever']})", "", f"{recall} over {r['n_covered']} covered examples."]
    if "evidence" in report:
        e = report["evidence"]
        lines += ["", f"Evidence coverage ({e['mode']}): {e['coverage']:.3f} over {e['n']}."]
    if "sql_oracle" in report:
        s = report["sql_oracle"]
        lines += ["", "## SQL oracle", "", f"execution rate {s['execution_rate']:.3f}, "
                  f"exact rate {s['exact_rate'] if s['exact_rate'] is None else round(s['exact_rate'], 3)}, "
                  f"soft resolution {s['soft_resolution_rate'] if s['soft_resolution_rate'] is None else round(s['soft_resolution_rate'], 3)}."]
    if "attribution" in report:
        lines += ["", "## Attribution", ""]
        for tag, entry in sorted(report["attribution"].items()):
            dist = entry["distribution"]
            parts = ", ".join(f"{k}={v:.3f}" for k, v in dist.items() if v)
            lines.append(f"- {tag}: {parts}")
    if "governance" in report:
        g = report["governance"]
        lines += ["", "## Governance", "",
                  f"coverage {g['coverage']:.3f}, conflict {g['conflict_rate']:.3f}, "
                  f"abstention {g['abstention_rate']:.3f}"
                  + (" (diagnostic only)" if g["diagnostic_only"] else "")]
    if "errors" in report:
        lines += ["", f"Per-example failures: {report['errors']['count']}."]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def emit_plots(report: dict, plot_dir) -> list[str]:
    """One CSV per figure family; emission only, no rendering."""
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def write_csv(name: str, header: list[str], rows: list[list]):
        p = plot_dir / name
        with open(p, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        written.append(name)

    if "metrics" in report:
        rows = [
            [tag, entry["qa"]["em"], entry["qa"]["f1"]]
            for tag, entry in sorted(report["metrics"].items())
            if "qa" in entry
        ]
        if rows:
            write_csv("qa_bars.csv", ["model", "em", "f1"], rows)
    if "attribution" in report:
        rows = []
        for tag, entry in sorted(report["attribution"].items()):
            for label, share in entry["distribution"].items():
                rows.append([tag, label, share])
        if rows:
            write_csv("attribution.csv", ["model", "label", "share"], rows)
    if "probe_deltas" in report:
        rows = []
        for tag, entry in sorted(report["probe_deltas"].items()):
            for metric in ("em", "f1"):
                m = entry[metric]
                rows.append([entry["probe"], metric, m["before"], m["after"], m["delta"]])
        write_csv("contamination.csv", ["probe", "metric", "before", "after", "delta"], rows)
    if "retrieval" in report and "metrics" in report:
        r10 = report["retrieval"]["recall_at_k"].get("10")
        rows = [
            [report["retrieval"]["retriever"], r10, entry["qa"]["em"]]
            for _, entry in sorted(report["metrics"].items())
            if "qa" in entry
        ]
        if rows and r10 is not None:
            write_csv("recall_em.csv", ["retriever", "recall@10", "em"], rows)
    return written


# --------------------------------------------------------------------------
# provenance verification
# --------------------------------------------------------------------------

def verify(out_dir) -> list[str]:
    """Recompute report numbers from the stage JSONL files; returns the list
    of mismatches (empty means the report is consistent)."""
    out = Path(out_dir)
    with open(out / "report.json", encoding="utf-8") as f:
        report = json.load(f)
    problems = []

    def close(a, b) -> bool:
        if a is None or b is None:
            return a == b
        return abs(a - b) <= 1e-9

    evidence_path = out / "evidence.jsonl"
    if "evidence" in report and evidence_path.exists():
        records = [json.loads(line) for line in evidence_path.read_text("utf-8").splitlines() if line]
        if records:
            coverage = sum(1 for r in records if r["covered"]) / len(records)
            if not close(coverage, report["evidence"]["coverage"]):
                problems.append(
                    f"evidence coverage {coverage} != report {report['evidence']['coverage']}"
                )
    recall_path = out / "recall.jsonl"
    if "retrieval" in report and recall_path.exists():
        records = [json.loads(line) for line in recall_path.read_text("utf-8").splitlines() if line]
        for k, expected in report["retrieval"]["recall_at_k"].items():
            vals = [r["hits"][k] for r in records if k in r["hits"]]
            got = sum(vals) / len(vals) if vals else None
            if not close(got, expected):
                problems.append(f"recall@{k} {got} != report {expected}")
    for tag, entry in report.get("attribution", {}).items():
        path = out / f"attribution_{tag}.jsonl"
        if not path.exists():
            problems.append(f"missing stage file for attribution:{tag}")
            continue
        records = [json.loads(line) for line in path.read_text("utf-8").splitlines() if line]
        labels = [r["label"] for r in records]
        for label, share in entry["distribution"].items():
            got = labels.count(label) / len(labels) if labels else None
            if not close(got, share):
                problems.append(f"attribution {tag}/{label} {got} != report {share}")
        for r in records:
            from .attribution import label_from_trace

            if label_from_trace(tuple(r["rule_trace"])) != r["label"]:
                problems.append(f"attribution {tag}/{r['id']}: trace does not replay to label")
                break
    return problems
