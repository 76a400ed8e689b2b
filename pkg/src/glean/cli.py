"""Command-line interface.

Subcommands mirror the pipeline stages so each artifact can be produced and
inspected on its own; `report` executes the whole pipeline from a manifest.
Exit codes: 0 ok, 1 hard schema failure, 2 fail-soft threshold exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import governance as gov_mod
from . import harness
from . import metrics as metrics_mod
from . import serialization
from .dataset import ingest, synth_generate, write_bundle, write_jsonl
from .errors import GleanError, SchemaError
from .serialization import FORMATS
from .table_core import GroundingConfig, DEFAULT_GROUNDING, TokenBudget, tokenize


def _tagged(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        tag, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"expected tag=path, got {item!r}")
        out[tag] = path
    return out


def _grounding(args) -> GroundingConfig:
    if getattr(args, "grounding_config", None):
        with open(args.grounding_config, encoding="utf-8") as f:
            return GroundingConfig.from_dict(json.load(f))
    return DEFAULT_GROUNDING


def _bundle(args, need_predictions: bool = False):
    return ingest(
        args.tables,
        args.examples,
        predictions=_tagged(getattr(args, "predictions", None)) if not need_predictions or args.predictions else None,
        gold_sql_path=getattr(args, "gold_sql", None),
        embeddings_path=getattr(args, "embeddings", None),
        scores=_tagged(getattr(args, "scores", None)),
        judgments_path=getattr(args, "judgments", None),
    )


def cmd_synth(args) -> int:
    bundle, _ = synth_generate(args.n, args.seed)
    paths = write_bundle(bundle, args.out)
    print(f"wrote {len(bundle.tables)} tables, {len(bundle.examples)} examples to {args.out}")
    for name, p in sorted(paths.items()):
        print(f"  {name}: {p}")
    return 0


def cmd_ingest(args) -> int:
    bundle = _bundle(args)
    qa = sum(1 for e in bundle.examples.values() if e.task == "qa")
    print(f"tables: {len(bundle.tables)}")
    print(f"examples: {len(bundle.examples)} ({qa} qa / {len(bundle.examples) - qa} verdict)")
    for tag, preds in sorted(bundle.predictions.items()):
        print(f"predictions[{tag}]: {len(preds)}")
    if bundle.sql_info:
        print(f"gold sql: {len(bundle.sql_info)}")
    return 0


def cmd_serialize(args) -> int:
    bundle = _bundle(args)
    records = []
    if args.per_example:
        for ex_id in bundle.example_ids():
            t = bundle.table_for(bundle.examples[ex_id])
            records.append({"id": ex_id, "format": args.format, "text": serialization.emit(t, args.format)})
    else:
        for table_id in sorted(bundle.tables):
            records.append(
                {"id": table_id, "format": args.format, "text": serialization.emit(bundle.tables[table_id], args.format)}
            )
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_probe(args) -> int:
    bundle = _bundle(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, tables, skipped = [], {}, []
    for ex_id in bundle.example_ids():
        ex = bundle.examples[ex_id]
        if ex.task != "qa":
            continue
        try:
            p = harness.apply_probe(bundle, ex, args.kind, args.seed, args.canary)
        except GleanError as e:
            skipped.append({"id": ex_id, "reason": str(e)})
            continue
        records.append(
            {
                "source_id": p.source_id,
                "probe": p.probe,
                "question": p.question,
                "table_id": p.table_id,
                "claim": p.label_preserving_claim,
            }
        )
        if p.table is not None:
            tables[p.table.table_id] = p.table
    write_jsonl(out_dir / "probes.jsonl", records)
    write_jsonl(
        out_dir / "probe_tables.jsonl",
        (
            {"table_id": t.table_id, "headers": list(t.headers), "rows": t.raw_rows()}
            for _, t in sorted(tables.items())
        ),
    )
    write_jsonl(out_dir / "probe_skipped.jsonl", skipped)
    print(f"{args.kind}: {len(records)} perturbed, {len(skipped)} skipped")
    return 0


def _retrieval_rows(args, bundle, with_context: bool):
    cfg = _grounding(args)
    budget = TokenBudget(max_table_tokens=args.budget, max_cols=args.max_cols)
    mode = {"answer": "answer", "sql": "sql", "hybrid": "hybrid"}[args.evidence_mode]
    for ex_id in bundle.example_ids():
        ex = bundle.examples[ex_id]
        if ex.task != "qa":
            continue
        ev = harness.detect_evidence(bundle, ex, mode, cfg)
        ranking = harness.rank_rows(bundle, ex, args.retriever, ev)
        pruned = None
        context = None
        if with_context:
            from . import retrieval as retrieval_mod

            pruned = retrieval_mod.budget_prune(
                bundle.table_for(ex), ranking, tokenize(ex.question), budget, ev
            )
            context = serialization.emit(pruned.table, args.format)
            if pruned.oversize:
                context = retrieval_mod.truncate_tokens(context, budget.max_table_tokens)
        yield ex, ev, ranking, pruned, context


def cmd_retrieve(args) -> int:
    from . import retrieval as retrieval_mod

    bundle = _bundle(args)
    ks = [int(k) for k in args.k.split(",")] if args.k else []
    records, recall_records = [], []
    recall_acc = {k: [] for k in ks}
    for ex, ev, r, _, _ in _retrieval_rows(args, bundle, with_context=False):
        records.append(
            {"id": ex.id, "retriever": r.retriever, "order": list(r.order), "scores": list(r.scores)}
        )
        if ks and ev.covered:
            hits = retrieval_mod.recall_at_k(r, ev, ks)
            recall_records.append(
                {"id": ex.id, "hits": {str(k): v for k, v in hits.items()},
                 "hit_rank": retrieval_mod.first_hit_rank(r, ev)}
            )
            for k in ks:
                recall_acc[k].append(hits[k])
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} rankings to {args.out}")
    if args.recall_out and recall_records:
        write_jsonl(args.recall_out, recall_records)
        summary = ", ".join(
            f"R@{k}={sum(v) / len(v):.4f}" for k, v in sorted(recall_acc.items()) if v
        )
        print(f"{summary} over {len(recall_records)} covered examples")
    return 0


def cmd_prune(args) -> int:
    bundle = _bundle(args)
    records = []
    for ex, ev, _, pruned, _ in _retrieval_rows(args, bundle, with_context=True):
        records.append(
            {
                "id": ex.id,
                "kept_rows": list(pruned.kept_rows),
                "kept_cols": list(pruned.kept_cols),
                "token_count": pruned.token_count,
                "oversize": pruned.oversize,
                "evidence_survived": sorted(pruned.evidence_survived)
                if pruned.evidence_survived is not None
                else None,
            }
        )
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} pruned contexts to {args.out}")
    return 0


def cmd_requests(args) -> int:
    bundle = _bundle(args)
    records = []
    for ex, _, _, _, context in _retrieval_rows(args, bundle, with_context=True):
        rec = {"id": ex.id, "question": ex.question, "context": context}
        if args.planted and ex.gold_answers:
            rec["planted"] = ex.gold_answers[0]
        records.append(rec)
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} inference requests to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = _bundle(args)
    out = {}
    for tag, preds in sorted(bundle.predictions.items()):
        golds = {
            i: list(bundle.examples[i].gold_answers)
            for i in bundle.example_ids()
            if bundle.examples[i].task == "qa" and i in preds
        }
        if not golds:
            continue
        block, _ = metrics_mod.evaluate_predictions({i: preds[i] for i in golds}, golds, seed=args.seed)
        out[tag] = block.to_dict()
        print(f"{tag}: EM={block.em:.4f} F1={block.f1:.4f} n={block.n}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(out, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def cmd_evidence(args) -> int:
    bundle = _bundle(args)
    cfg = _grounding(args)
    records = []
    covered = 0
    for ex_id in bundle.example_ids():
        ex = bundle.examples[ex_id]
        if ex.task != "qa":
            continue
        ev = harness.detect_evidence(bundle, ex, args.evidence_mode, cfg)
        covered += int(ev.covered)
        records.append({"id": ex_id, "mode": ev.mode, "rows": sorted(ev.rows), "covered": ev.covered})
    write_jsonl(args.out, records)
    if records:
        print(f"coverage: {covered / len(records):.4f} over {len(records)} examples")
    return 0


def cmd_sql_audit(args) -> int:
    bundle = _bundle(args)
    cfg = _grounding(args)
    from .sql_anchor import MatchVerdict, accounting

    records = []
    for ex_id in bundle.example_ids():
        if ex_id not in bundle.sql_info:
            continue
        records.append(harness.sql_oracle_record(bundle, bundle.examples[ex_id], cfg))
    write_jsonl(args.out, records)
    pairs = [
        (r["status"], MatchVerdict(r["exact"], r["soft"], r["category"]) if r["exact"] is not None else None)
        for r in records
    ]
    if pairs:
        acct = accounting(pairs).to_dict()
        print(json.dumps(acct, indent=2, sort_keys=True))
    return 0


def cmd_attribute(args) -> int:
    bundle = _bundle(args)
    cfg = _grounding(args)
    from .attribution import attribute, attribution_distribution

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for tag, preds in sorted(bundle.predictions.items()):
        records = []
        for ex_id in bundle.example_ids():
            ex = bundle.examples[ex_id]
            if ex.task != "qa" or ex_id not in preds:
                continue
            sql_status = None
            oracle = list(ex.gold_answers)
            source = "gold_answer"
            if ex_id in bundle.sql_info:
                rec = harness.sql_oracle_record(bundle, ex, cfg)
                sql_status = rec["status"]
                if rec["status"] == "ok" and rec["denotation"]:
                    oracle = rec["denotation"]
                    source = "sql"
            records.append(
                attribute(
                    preds[ex_id], oracle, bundle.table_for(ex),
                    sql_status=sql_status, cfg=cfg, example_id=ex_id, oracle_source=source,
                )
            )
        write_jsonl(
            out_dir / f"attribution_{tag}.jsonl",
            (
                {"id": r.example_id, "label": r.label, "rule_trace": list(r.rule_trace),
                 "oracle_source": r.oracle_source}
                for r in records
            ),
        )
        if records:
            dist = attribution_distribution(records)
            print(f"{tag}: " + ", ".join(f"{k}={v:.3f}" for k, v in dist.items()))
    return 0


def cmd_govern(args) -> int:
    bundle = _bundle(args)
    lfs = gov_mod.load_lf_catalog(args.lf_catalog)
    statements = [
        (i, bundle.examples[i].question)
        for i in bundle.example_ids()
        if bundle.examples[i].task == "verdict"
    ]
    if not statements:
        print("no verdict examples")
        return 0
    matrix = gov_mod.apply_lfs(lfs, statements)
    gold = [bundle.examples[i].gold_label for i, _ in statements]
    report = gov_mod.governance_report(matrix, lfs, gold)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"coverage={report.coverage:.4f} conflict={report.conflict_rate:.4f} "
        f"abstention={report.abstention_rate:.4f}"
    )
    return 0


def cmd_report(args) -> int:
    manifest = harness.RunManifest.load(args.manifest)
    result = harness.run(manifest, args.out_dir, workers=args.workers)
    print(f"report written to {result.out_dir / 'report.json'}")
    if result.errors:
        print(f"{len(result.errors)} per-example failures (see errors.jsonl)")
    return result.exit_code


def cmd_verify(args) -> int:
    problems = harness.verify(args.out_dir)
    if problems:
        for p in problems:
            print(f"MISMATCH: {p}")
        return 1
    print("report numbers recomputed from stage files: consistent")
    return 0


def _add_bundle_flags(p, predictions: bool = False, sql: bool = False):
    p.add_argument("--tables", required=True, help="tables JSONL")
    p.add_argument("--examples", required=True, help="examples JSONL")
    if predictions:
        p.add_argument("--predictions", action="append", metavar="TAG=PATH")
    if sql:
        p.add_argument("--gold-sql", help="gold SQL JSONL")


def _add_retrieval_flags(p):
    p.add_argument("--retriever", default="bm25",
                   help="tfidf|bm25|bm25f|cell_bm25|dense|sql_gold|scores:TAG|hybrid:A+B")
    p.add_argument("--evidence-mode", default="answer", choices=["answer", "sql", "hybrid"])
    p.add_argument("--budget", type=int, default=1024, choices=[512, 1024, 2048])
    p.add_argument("--max-cols", type=int, default=16)
    p.add_argument("--format", default="markdown", choices=list(FORMATS))
    p.add_argument("--embeddings", help="embeddings JSONL for dense retrieval")
    p.add_argument("--scores", action="append", metavar="TAG=PATH")
    p.add_argument("--gold-sql", help="gold SQL JSONL")
    p.add_argument("--grounding-config", help="JSON file of grounding settings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glean", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic validation corpus")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="validate a dataset bundle")
    _add_bundle_flags(p, predictions=True, sql=True)
    p.add_argument("--embeddings")
    p.add_argument("--scores", action="append", metavar="TAG=PATH")
    p.add_argument("--judgments")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("serialize", help="emit serialized tables")
    _add_bundle_flags(p)
    p.add_argument("--format", required=True, choices=list(FORMATS))
    p.add_argument("--per-example", action="store_true",
                   help="one record per example instead of per table")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_serialize)

    p = sub.add_parser("probe", help="apply a contamination probe")
    _add_bundle_flags(p)
    p.add_argument("--kind", required=True, choices=[k for k in
                   ("canary", "entity_swap", "paraphrase", "row_permute",
                    "col_permute", "schema_rename", "counterfactual_swap")])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canary", default="")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("retrieve", help="rank table rows per example")
    _add_bundle_flags(p)
    _add_retrieval_flags(p)
    p.add_argument("--k", default="1,2,5,10", help="comma list of recall cutoffs")
    p.add_argument("--recall-out", help="also write per-example recall hits here")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("prune", help="budget-prune ranked rows")
    _add_bundle_flags(p)
    _add_retrieval_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("requests", help="emit inference requests")
    _add_bundle_flags(p)
    _add_retrieval_flags(p)
    p.add_argument("--planted", action="store_true",
                   help="include the gold answer for echo-model loopback tests")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_requests)

    p = sub.add_parser("evaluate", help="score prediction files")
    _add_bundle_flags(p, predictions=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("evidence", help="detect evidence rows")
    _add_bundle_flags(p, sql=True)
    p.add_argument("--evidence-mode", default="answer", choices=["answer", "sql", "hybrid"])
    p.add_argument("--grounding-config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evidence)

    p = sub.add_parser("sql-audit", help="execute gold SQL and account for mismatches")
    _add_bundle_flags(p, sql=True)
    p.add_argument("--grounding-config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sql_audit)

    p = sub.add_parser("attribute", help="label errors per prediction file")
    _add_bundle_flags(p, predictions=True, sql=True)
    p.add_argument("--grounding-config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_attribute)

    p = sub.add_parser("govern", help="labeling-function governance report")
    _add_bundle_flags(p)
    p.add_argument("--lf-catalog", help="LF catalog JSONL (defaults to the packaged seed catalog)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_govern)

    p = sub.add_parser("report", help="full pipeline run from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None,
                   help="worker pool size (default: GLEAN_WORKERS or 1); never affects outputs")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="recompute report numbers from stage files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 1
    except GleanError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
