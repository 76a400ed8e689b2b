import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from glean.dataset import (
    DatasetBundle,
    Example,
    ingest,
    load_examples,
    load_tables,
    synth_generate,
    write_bundle,
    write_jsonl,
)
from glean.errors import DanglingReference, DuplicateId, SchemaError
from glean.harness import RunManifest, run, verify, worker_count


def write_min_bundle(tmp_path, tables=None, examples=None):
    tables = tables if tables is not None else [
        {"table_id": "t1", "headers": ["a"], "rows": [["1"], ["2"]]}
    ]
    examples = examples if examples is not None else [
        {"id": "e1", "task": "qa", "question": "q", "table_id": "t1", "gold_answers": ["1"]}
    ]
    tp = tmp_path / "tables.jsonl"
    ep = tmp_path / "examples.jsonl"
    write_jsonl(tp, tables)
    write_jsonl(ep, examples)
    return tp, ep


def test_ingest_valid(tmp_path):
    tp, ep = write_min_bundle(tmp_path)
    bundle = ingest(tp, ep)
    assert len(bundle.tables) == 1 and len(bundle.examples) == 1


def test_ingest_dangling_table(tmp_path):
    tp, ep = write_min_bundle(
        tmp_path,
        examples=[{"id": "e1", "task": "qa", "question": "q", "table_id": "nope",
                   "gold_answers": ["1"]}],
    )
    with pytest.raises(DanglingReference):
        ingest(tp, ep)


def test_ingest_duplicate_table(tmp_path):
    rec = {"table_id": "t1", "headers": ["a"], "rows": [["1"]]}
    tp, ep = write_min_bundle(tmp_path, tables=[rec, rec])
    with pytest.raises(DuplicateId):
        load_tables(tp)


def test_ingest_dangling_prediction(tmp_path):
    tp, ep = write_min_bundle(tmp_path)
    pp = tmp_path / "preds.jsonl"
    write_jsonl(pp, [{"id": "ghost", "prediction": "x"}])
    with pytest.raises(DanglingReference):
        ingest(tp, ep, predictions={"m": pp})


def test_ingest_schema_error_has_location(tmp_path):
    tp = tmp_path / "tables.jsonl"
    tp.write_text('{"table_id": "t1", "headers": ["a"]}\n', encoding="utf-8")
    with pytest.raises(SchemaError) as e:
        load_tables(tp)
    assert e.value.line == 1


def test_ingest_ragged_table_rejected(tmp_path):
    tp, ep = write_min_bundle(
        tmp_path, tables=[{"table_id": "t1", "headers": ["a"], "rows": [["1", "2"]]}]
    )
    with pytest.raises(SchemaError):
        load_tables(tp)


def test_synth_planted_answers_ground():
    bundle, echo = synth_generate(50, seed=3)
    from glean.evidence import detect_answer_rows

    for ex_id, ex in bundle.examples.items():
        if ex.task != "qa":
            continue
        ev = detect_answer_rows(bundle.table_for(ex), list(ex.gold_answers))
        assert ev.covered, ex_id


def test_synth_deterministic():
    a, _ = synth_generate(10, seed=4)
    b, _ = synth_generate(10, seed=4)
    assert [t.raw_rows() for t in a.tables.values()] == [t.raw_rows() for t in b.tables.values()]
    assert {e.id: e.question for e in a.examples.values()} == {
        e.id: e.question for e in b.examples.values()
    }


def make_manifest(tmp_path, n=12, seed=5, **overrides):
    bundle, _ = synth_generate(n, seed=seed)
    paths = write_bundle(bundle, tmp_path / "data")
    kwargs = dict(
        run_id="test",
        global_seed=seed,
        dataset_tag=f"synth-{n}",
        tables_path=str(paths["tables"]),
        examples_path=str(paths["examples"]),
        prediction_paths={"synth-echo": str(paths["predictions:synth-echo"])},
    )
    kwargs.update(overrides)
    return RunManifest(**kwargs)


def test_run_end_to_end(tmp_path):
    manifest = make_manifest(tmp_path, probe_kinds=["row_permute", "schema_rename"])
    result = run(manifest, tmp_path / "out", workers=1)
    rep = result.report
    assert result.exit_code == 0
    assert rep["metrics"]["synth-echo"]["qa"]["em"] == 1.0
    assert rep["evidence"]["coverage"] == 1.0
    assert rep["attribution"]["synth-echo"]["distribution"]["OK"] == 1.0
    assert (tmp_path / "out" / "report.md").exists()
    assert (tmp_path / "out" / "plots" / "qa_bars.csv").exists()


def test_run_worker_count_invariance(tmp_path):
    m1 = make_manifest(tmp_path, probe_kinds=["counterfactual_swap"])
    m2 = RunManifest.from_dict(m1.to_dict())
    run(m1, tmp_path / "o1", workers=1)
    run(m2, tmp_path / "o2", workers=8)
    for name in ("report.json", "evidence.jsonl", "rankings.jsonl", "requests.jsonl"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_stage_gating_sql_off(tmp_path):
    manifest = make_manifest(tmp_path, stages={"sql": False})
    result = run(manifest, tmp_path / "out", workers=1)
    assert "sql_oracle" not in result.report
    # attribution still runs, anchored on gold answers
    records = (tmp_path / "out" / "attribution_synth-echo.jsonl").read_text().splitlines()
    assert all(json.loads(r)["oracle_source"] == "gold_answer" for r in records)


def test_stage_isolation(tmp_path):
    base = make_manifest(tmp_path)
    gated = RunManifest.from_dict(base.to_dict())
    gated.stages = {"governance": False}
    run(base, tmp_path / "a", workers=1)
    run(gated, tmp_path / "b", workers=1)
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert "governance" in ra and "governance" not in rb
    assert ra["metrics"] == rb["metrics"]
    assert ra["evidence"] == rb["evidence"]
    assert ra["retrieval"] == rb["retrieval"]


def test_verify_consistency_and_tamper(tmp_path):
    manifest = make_manifest(tmp_path)
    run(manifest, tmp_path / "out", workers=1)
    assert verify(tmp_path / "out") == []
    report_path = tmp_path / "out" / "report.json"
    rep = json.loads(report_path.read_text())
    rep["evidence"]["coverage"] = 0.123
    report_path.write_text(json.dumps(rep))
    assert verify(tmp_path / "out")


def test_manifest_digest_mismatch(tmp_path):
    manifest = make_manifest(tmp_path)
    result = run(manifest, tmp_path / "out", workers=1)
    assert result.exit_code == 0
    # re-running with a stale digest against edited inputs must hard-fail
    stale = RunManifest.load(tmp_path / "out" / "manifest.json")
    with open(manifest.examples_path, "a", encoding="utf-8") as f:
        f.write(
            json.dumps({"id": "late", "task": "qa", "question": "q", "table_id":
                        json.loads(Path(manifest.tables_path).read_text().splitlines()[0])["table_id"],
                        "gold_answers": ["1"]}) + "\n"
        )
    from glean.errors import GleanError

    with pytest.raises(GleanError):
        run(stale, tmp_path / "out2", workers=1)


def test_alternate_retrievers_and_judgments(tmp_path):
    bundle, _ = synth_generate(5, seed=2)
    paths = write_bundle(bundle, tmp_path / "data")
    qa_ids = sorted(i for i, e in bundle.examples.items() if e.task == "qa")
    emb, scores, gold_sql = [], [], []
    for ex_id in qa_ids:
        ex = bundle.examples[ex_id]
        t = bundle.table_for(ex)
        target = int(ex.question.rsplit("_", 1)[1])
        dim = 4
        rows = [[1.0 if (i + j) % dim == 0 else 0.0 for j in range(dim)] for i in range(t.n_rows)]
        emb.append({"id": ex_id, "model_tag": "unit", "question_vec": rows[target],
                    "row_vecs": rows})
        scores.append({"id": ex_id, "scores": [float(i == target) for i in range(t.n_rows)]})
        key = f"key_{ex_id.rsplit('_', 1)[1]}_{target}"
        gold_sql.append({"id": ex_id, "sql": f"SELECT c1 FROM w WHERE c1 = '{key}'"})
    write_jsonl(tmp_path / "emb.jsonl", emb)
    write_jsonl(tmp_path / "scores.jsonl", scores)
    write_jsonl(tmp_path / "gold_sql.jsonl", gold_sql)
    write_jsonl(tmp_path / "judge.jsonl", [
        {"id": qa_ids[0], "row": 0, "judgment": "supported", "judge": "j1"},
        {"id": qa_ids[0], "row": 0, "judgment": "supported", "judge": "j2"},
        {"id": qa_ids[1], "row": 1, "judgment": "not_supported", "judge": "j1"},
        {"id": qa_ids[1], "row": 1, "judgment": "supported", "judge": "j2"},
        {"id": qa_ids[2], "row": 0, "judgment": "not_supported", "judge": "j1"},
        {"id": qa_ids[2], "row": 0, "judgment": "not_supported", "judge": "j2"},
    ])
    base = dict(
        run_id="alt",
        tables_path=str(paths["tables"]),
        examples_path=str(paths["examples"]),
        prediction_paths={"synth-echo": str(paths["predictions:synth-echo"])},
        embeddings_path=str(tmp_path / "emb.jsonl"),
        score_paths={"rr": str(tmp_path / "scores.jsonl")},
        gold_sql_path=str(tmp_path / "gold_sql.jsonl"),
        judgments_path=str(tmp_path / "judge.jsonl"),
        evidence_mode="sql",
    )
    for i, retriever in enumerate(["dense", "scores:rr", "hybrid:bm25+dense", "sql_gold"]):
        manifest = RunManifest(retriever=retriever, **base)
        result = run(manifest, tmp_path / f"out{i}", workers=2)
        assert result.report["errors"]["count"] == 0
        assert result.report["retrieval"]["recall_at_k"]["1"] == 1.0, retriever
    assert result.report["sql_oracle"]["execution_rate"] == 1.0
    assert "j1|j2" in result.report["audit_agreement"]


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("GLEAN_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("GLEAN_WORKERS", "6")
    assert worker_count() == 6
    assert worker_count(3) == 3


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "glean.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def test_cli_synth_ingest_serialize(tmp_path):
    out = tmp_path / "corpus"
    r = run_cli("synth", "--n", "8", "--seed", "1", "--out", str(out))
    assert r.returncode == 0, r.stderr
    r = run_cli("ingest", "--tables", str(out / "tables.jsonl"),
                "--examples", str(out / "examples.jsonl"))
    assert r.returncode == 0 and "tables: 8" in r.stdout
    r = run_cli("serialize", "--tables", str(out / "tables.jsonl"),
                "--examples", str(out / "examples.jsonl"),
                "--format", "kv", "--out", str(tmp_path / "ser.jsonl"))
    assert r.returncode == 0
    first = json.loads((tmp_path / "ser.jsonl").read_text().splitlines()[0])
    assert first["format"] == "kv" and first["text"].startswith("row 1:")


def test_cli_schema_failure_exit_code(tmp_path):
    bad = tmp_path / "tables.jsonl"
    bad.write_text("not json\n", encoding="utf-8")
    ex = tmp_path / "examples.jsonl"
    ex.write_text("", encoding="utf-8")
    r = run_cli("ingest", "--tables", str(bad), "--examples", str(ex))
    assert r.returncode == 1


def test_cli_probe_and_requests_echo_loopback(tmp_path):
    out = tmp_path / "corpus"
    run_cli("synth", "--n", "6", "--seed", "2", "--out", str(out))
    r = run_cli("probe", "--kind", "row_permute", "--seed", "3",
                "--tables", str(out / "tables.jsonl"),
                "--examples", str(out / "examples.jsonl"),
                "--out-dir", str(tmp_path / "probes"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "probes" / "probes.jsonl").exists()

    r = run_cli("requests", "--tables", str(out / "tables.jsonl"),
                "--examples", str(out / "examples.jsonl"),
                "--planted", "--out", str(tmp_path / "requests.jsonl"))
    assert r.returncode == 0, r.stderr
    # echo model: copy the planted field into predictions
    preds = []
    for line in (tmp_path / "requests.jsonl").read_text().splitlines():
        rec = json.loads(line)
        preds.append({"id": rec["id"], "prediction": rec["planted"]})
    pp = tmp_path / "preds.jsonl"
    write_jsonl(pp, preds)
    r = run_cli("evaluate", "--tables", str(out / "tables.jsonl"),
                "--examples", str(out / "examples.jsonl"),
                "--predictions", f"echo={pp}")
    assert r.returncode == 0 and "EM=1.0000" in r.stdout


def test_cli_report_and_verify(tmp_path):
    out = tmp_path / "corpus"
    run_cli("synth", "--n", "6", "--seed", "4", "--out", str(out))
    manifest = RunManifest(
        run_id="cli",
        tables_path=str(out / "tables.jsonl"),
        examples_path=str(out / "examples.jsonl"),
        prediction_paths={"synth-echo": str(out / "predictions_synth-echo.jsonl")},
    )
    mp = tmp_path / "manifest.json"
    manifest.save(mp)
    r = run_cli("report", "--manifest", str(mp), "--out-dir", str(tmp_path / "run"))
    assert r.returncode == 0, r.stderr
    r = run_cli("verify", "--out-dir", str(tmp_path / "run"))
    assert r.returncode == 0 and "consistent" in r.stdout


def test_cli_workers_env_does_not_change_outputs(tmp_path):
    out = tmp_path / "corpus"
    run_cli("synth", "--n", "6", "--seed", "9", "--out", str(out))
    manifest = RunManifest(
        run_id="envtest",
        tables_path=str(out / "tables.jsonl"),
        examples_path=str(out / "examples.jsonl"),
        prediction_paths={"synth-echo": str(out / "predictions_synth-echo.jsonl")},
    )
    mp = tmp_path / "manifest.json"
    manifest.save(mp)
    env1 = dict(os.environ, GLEAN_WORKERS="1")
    env8 = dict(os.environ, GLEAN_WORKERS="8")
    subprocess.run([sys.executable, "-m", "glean.cli", "report", "--manifest", str(mp),
                    "--out-dir", str(tmp_path / "w1")], env=env1, check=True,
                   capture_output=True)
    subprocess.run([sys.executable, "-m", "glean.cli", "report", "--manifest", str(mp),
                    "--out-dir", str(tmp_path / "w8")], env=env8, check=True,
                   capture_output=True)
    assert (tmp_path / "w1" / "report.json").read_bytes() == (tmp_path / "w8" / "report.json").read_bytes()
