import json
from pathlib import Path

import pytest

from diagkit import jsonl
from diagkit.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, dispatch

from conftest import FIXTURES

KG = str(FIXTURES / "kg.jsonl")
CRITERIA = str(FIXTURES / "criteria.jsonl")
CORPUS = str(FIXTURES / "corpus.jsonl")
SCRIPTS = str(FIXTURES / "stub_scripts_egdr.jsonl")


@pytest.fixture()
def small_corpus(tmp_path):
    lines = Path(CORPUS).read_text().splitlines()[:6]
    path = tmp_path / "corpus.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_kg_validate_ok(capsys):
    assert dispatch(["kg", "validate", "--kg", KG]) == EXIT_OK
    out = capsys.readouterr().out
    assert "entities" in out and "triplets" in out


def test_kg_validate_invalid_file(tmp_path, capsys):
    bad = tmp_path / "kg.jsonl"
    bad.write_text('{"type": "entity", "id": "root", "name": "r", "kind": "Root", "aliases": []}\n' * 2)
    assert dispatch(["kg", "validate", "--kg", str(bad)]) == EXIT_VALIDATION


def test_unknown_subcommand_is_usage_error(capsys):
    assert dispatch(["frobnicate"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_is_usage_error(capsys):
    assert dispatch(["kg", "validate", "--kg", KG, "--frobnicate"]) == EXIT_USAGE


def test_diagnose_writes_records_and_manifest(tmp_path, small_corpus):
    out = tmp_path / "hyp.jsonl"
    status = dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(out), "--provider", "stub", "--scripts", SCRIPTS, "--mode", "egdr",
        ]
    )
    assert status == EXIT_OK
    records = jsonl.read_records(out)
    assert len(records) == 6
    assert [r["dialogue_id"] for r in records] == sorted(r["dialogue_id"] for r in records)
    manifest = json.loads((tmp_path / "hyp.jsonl.manifest.json").read_text())
    assert manifest["counts"] == {"processed": 6, "failed": 0}
    assert manifest["command"] == "diagnose"
    assert manifest["config"]["alpha"] == 0.5
    assert manifest["config"]["lambda"] == 0.75


def test_diagnose_requires_provider(tmp_path, small_corpus):
    status = dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(tmp_path / "h.jsonl"),
        ]
    )
    assert status == EXIT_USAGE


def test_stub_without_scripts_is_usage_error(tmp_path, small_corpus):
    status = dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(tmp_path / "h.jsonl"), "--provider", "stub",
        ]
    )
    assert status == EXIT_USAGE


def test_score_and_eval_flow(tmp_path, small_corpus, capsys):
    hyp = tmp_path / "hyp.jsonl"
    scores = tmp_path / "scores.jsonl"
    labels = tmp_path / "labels.jsonl"
    eval_dir = tmp_path / "eval"

    assert dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(hyp), "--provider", "stub", "--scripts", SCRIPTS,
        ]
    ) == EXIT_OK
    assert dispatch(
        [
            "score", "--kg", KG, "--criteria", CRITERIA, "--hypotheses", str(hyp),
            "--out", str(scores),
        ]
    ) == EXIT_OK
    assert dispatch(
        ["label", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus, "--out", str(labels)]
    ) == EXIT_OK
    assert dispatch(
        [
            "eval", "--corpus", small_corpus, "--hypotheses", str(hyp),
            "--scores", str(scores), "--labels", str(labels), "--out", str(eval_dir),
        ]
    ) == EXIT_OK

    out = capsys.readouterr().out
    assert "accuracy=1.0000" in out
    report = json.loads((eval_dir / "report.json").read_text())
    assert report["metrics"]["accuracy"] == 1.0
    assert (eval_dir / "per_class.csv").exists()
    assert (eval_dir / "subgroups.csv").exists()

    score_records = jsonl.read_records(scores)
    assert all(set(r["config"]) == {"alpha", "lambda"} for r in score_records)
    assert all("claims" in r and "evidence_triplet_ids" in r for r in score_records)


def test_label_uses_corpus_silver_when_available(tmp_path, small_corpus):
    labels = tmp_path / "labels.jsonl"
    assert dispatch(
        ["label", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus, "--out", str(labels)]
    ) == EXIT_OK
    by_id = {r["dialogue_id"]: r["label"] for r in jsonl.read_records(labels)}
    for record in jsonl.read_records(small_corpus):
        assert by_id[record["id"]] == record["silver_label"]


def test_ablate_writes_tables(tmp_path, small_corpus):
    hyp = tmp_path / "hyp.jsonl"
    scores = tmp_path / "scores.jsonl"
    out_dir = tmp_path / "ablation"
    dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(hyp), "--provider", "stub", "--scripts", SCRIPTS,
        ]
    )
    dispatch(
        ["score", "--kg", KG, "--criteria", CRITERIA, "--hypotheses", str(hyp), "--out", str(scores)]
    )
    assert dispatch(
        [
            "ablate", "--scores", str(scores), "--out", str(out_dir),
            "--lambda-grid", "0,0.5,1.0", "--alpha-grid", "0.5",
        ]
    ) == EXIT_OK
    rows = (out_dir / "ablation.csv").read_text().splitlines()
    assert rows[0].startswith("parameter,value,mean")
    assert len(rows) == 1 + 1 + 3  # header + 1 alpha row + 3 lambda rows


def test_report_renders_figures(tmp_path, small_corpus):
    hyp = tmp_path / "hyp.jsonl"
    scores = tmp_path / "scores.jsonl"
    out_dir = tmp_path / "report"
    dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(hyp), "--provider", "stub", "--scripts", SCRIPTS,
        ]
    )
    dispatch(
        ["score", "--kg", KG, "--criteria", CRITERIA, "--hypotheses", str(hyp), "--out", str(scores)]
    )
    assert dispatch(
        ["report", "--scores", str(scores), "--corpus", small_corpus, "--out", str(out_dir)]
    ) == EXIT_OK
    assert (out_dir / "dcs_correct.svg").exists()
    assert (out_dir / "dcs_incorrect.svg").exists()
    assert (out_dir / "report.json").exists()


def test_runs_are_reproducible_excluding_manifests(tmp_path, small_corpus):
    outputs = []
    for name in ("first", "second"):
        hyp = tmp_path / f"{name}.jsonl"
        dispatch(
            [
                "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
                "--out", str(hyp), "--provider", "stub", "--scripts", SCRIPTS, "--seed", "0",
            ]
        )
        outputs.append(hyp.read_bytes())
    assert outputs[0] == outputs[1]


def test_eval_without_references_is_validation_error(tmp_path, small_corpus, capsys):
    # strip the silver labels so neither the corpus nor --labels provides references
    records = [json.loads(line) for line in Path(small_corpus).read_text().splitlines()]
    for record in records:
        record.pop("silver_label", None)
    unlabeled = tmp_path / "unlabeled.jsonl"
    unlabeled.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    hyp = tmp_path / "hyp.jsonl"
    dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", str(unlabeled),
            "--out", str(hyp), "--provider", "stub", "--scripts", SCRIPTS,
        ]
    )
    status = dispatch(
        ["eval", "--corpus", str(unlabeled), "--hypotheses", str(hyp), "--out", str(tmp_path / "e")]
    )
    assert status == EXIT_VALIDATION
    assert "silver_label" in capsys.readouterr().err


def test_diagnose_counts_failures(tmp_path, small_corpus):
    # empty script file: every dialogue fails with a script miss
    empty_scripts = tmp_path / "empty.jsonl"
    empty_scripts.write_text("")
    out = tmp_path / "hyp.jsonl"
    status = dispatch(
        [
            "diagnose", "--kg", KG, "--criteria", CRITERIA, "--corpus", small_corpus,
            "--out", str(out), "--provider", "stub", "--scripts", str(empty_scripts),
        ]
    )
    assert status == EXIT_RUNTIME
    manifest = json.loads((tmp_path / "hyp.jsonl.manifest.json").read_text())
    assert manifest["counts"]["failed"] == 6
    assert manifest["counts"]["processed"] == 0
