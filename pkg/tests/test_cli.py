from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from semcache_testgen import fixture_path, read_dataset, read_qa
from semcache_testgen.cli import main, parse_thresholds

SCRIPTED = ["--provider", "scripted", "--script", str(fixture_path("script.json"))]


def run(argv: list[str]) -> int:
    try:
        return main(argv)
    except SystemExit as exc:  # argparse rejections
        return int(exc.code)


@pytest.fixture
def workdir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    monkeypatch.chdir(tmp_path)
    for var in ("SEMCACHE_LLM_URL", "SEMCACHE_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    return tmp_path


def _chain(d: Path) -> None:
    corpus = str(fixture_path("corpus.jsonl"))
    assert run(["generate", corpus, *SCRIPTED, "--out", str(d / "qa.jsonl")]) == 0
    assert run(["verify", str(d / "qa.jsonl"), corpus, "--out", str(d / "verified.jsonl")]) == 0
    assert run(["vary", str(d / "verified.jsonl"), corpus, *SCRIPTED, "--out", str(d / "groups.jsonl")]) == 0


def test_full_chain(workdir: Path, capsys: pytest.CaptureFixture) -> None:
    _chain(workdir)
    assert len(read_qa(workdir / "qa.jsonl")) == 11
    assert len(read_qa(workdir / "verified.jsonl")) == 10
    assert len(read_qa(workdir / "dropped.jsonl")) == 1
    assert len(read_dataset(workdir / "groups.jsonl")) == 10
    manifest = json.loads((workdir / "run_manifest.json").read_text())
    assert manifest["per_stage_counts"]["documents"] == 5
    assert manifest["per_stage_counts"]["groups"] == 10
    assert "SEMCACHE_API_KEY" not in json.dumps(manifest)

    assert run(["evaluate", str(workdir / "groups.jsonl"), "--out", str(workdir / "results")]) == 0
    out = capsys.readouterr().out
    assert "| Strategy | Correct Hits |" in out
    report = json.loads((workdir / "results" / "report.json").read_text())
    assert report["total"] == 41
    assert sum(report[k] for k in ("correct_hits", "incorrect_hits", "correct_misses", "incorrect_misses")) == 41
    assert len((workdir / "results" / "eval.jsonl").read_text().splitlines()) == 41

    assert run(["calibrate", str(workdir / "groups.jsonl"), "--thresholds", "0.5:1.0:0.1",
                "--out", str(workdir / "sweep.csv")]) == 0
    assert "best threshold" in capsys.readouterr().out
    rows = list(csv.DictReader((workdir / "sweep.csv").open()))
    assert [r["threshold"] for r in rows] == ["0.5", "0.6", "0.7", "0.8", "0.9", "1.0"]

    for fmt in ("json", "csv", "markdown"):
        assert run(["report", str(workdir / "results" / "report.json"), "--format", fmt,
                    "--out", str(workdir / f"summary.{fmt}")]) == 0
    assert json.loads((workdir / "summary.json").read_text())["total"] == 41


def test_single_threshold_calibrate_equals_evaluate(workdir: Path) -> None:
    groups = str(fixture_path("adversarial_groups.jsonl"))
    assert run(["evaluate", groups, "--threshold", "0.9", "--out", "res"]) == 0
    assert run(["calibrate", groups, "--thresholds", "0.9", "--out", "sweep.csv"]) == 0
    report = json.loads(Path("res/report.json").read_text())
    (row,) = list(csv.DictReader(open("sweep.csv")))
    for k in ("correct_hits", "incorrect_hits", "correct_misses", "incorrect_misses"):
        assert int(row[k]) == report[k]


def test_empty_dataset_reports_zeros(workdir: Path) -> None:
    Path("empty.jsonl").write_text("")
    assert run(["evaluate", "empty.jsonl", "--out", "res"]) == 0
    report = json.loads(Path("res/report.json").read_text())
    assert report["total"] == 0 and report["precision"] is None


@pytest.mark.parametrize(
    "argv",
    [
        ["generate", "missing.jsonl", *SCRIPTED],
        ["generate", str(fixture_path("corpus.jsonl")), *SCRIPTED, "--max-document-chars", "100"],
        ["generate", str(fixture_path("corpus.jsonl")), "--provider", "scripted"],
        ["verify", "qa.jsonl", str(fixture_path("corpus.jsonl")), "--top-n", "0"],
        ["vary", "qa.jsonl", str(fixture_path("corpus.jsonl")), "--per-question", "0"],
        ["evaluate", str(fixture_path("adversarial_groups.jsonl")), "--threshold", "1.5"],
        ["evaluate", str(fixture_path("adversarial_groups.jsonl")), "--threshold", "-0.1"],
        ["calibrate", str(fixture_path("adversarial_groups.jsonl")), "--thresholds", "0.9:0.5:0.1"],
        ["report", "report.json", "--format", "xml"],
        ["report", "missing.json"],
        ["evaluate", str(fixture_path("adversarial_groups.jsonl")), "--scorer", "scripted"],
    ],
)
def test_usage_errors_exit_2(workdir: Path, argv: list[str]) -> None:
    assert run(argv) == 2


def test_llm_400_is_a_recorded_skip(workdir: Path, stub_server) -> None:
    stub_server.failures["/v1/chat/completions"] = [400]
    corpus = fixture_path("corpus.jsonl")
    argv = ["generate", str(corpus), "--llm-url", stub_server.url, "--max-retries", "0",
            "--max-document-chars", "24000"]
    assert run(argv) == 0
    manifest = json.loads(Path("run_manifest.json").read_text())
    assert len([s for s in manifest["skipped"] if s["stage"] == "extract_answers"]) == 1
    assert manifest["llm_usage"]["failures"] == 1


def test_embedding_failure_exits_1(workdir: Path, stub_server, monkeypatch: pytest.MonkeyPatch) -> None:
    stub_server.failures["/v1/embeddings"] = [503] * 5
    monkeypatch.setenv("SEMCACHE_EMBEDDING_MAX_RETRIES", "1")
    qa = Path("qa.jsonl")
    qa.write_text(json.dumps({"qa_id": "q", "question": "What?", "answer": "A", "source_doc_id": "at1-report"}) + "\n")
    argv = ["verify", str(qa), str(fixture_path("corpus.jsonl")), "--embedder", "remote",
            "--embed-url", stub_server.url, "--embed-model", "m", "--dim", "8"]
    assert run(argv) == 1
    assert stub_server.count("/v1/embeddings") == 2


def test_replay_abort_exits_1(workdir: Path) -> None:
    Path("scores.json").write_text(json.dumps({"pairs": []}))
    argv = ["evaluate", str(fixture_path("adversarial_groups.jsonl")), "--scorer", "scripted",
            "--scorer-script", "scores.json", "--out", "res"]
    assert run(argv) == 1
    assert not Path("res/report.json").exists()


def test_oversize_document_message_names_doc(workdir: Path, capsys: pytest.CaptureFixture) -> None:
    assert run(["generate", str(fixture_path("corpus.jsonl")), *SCRIPTED, "--max-document-chars", "100"]) == 2
    assert "at1-report" in capsys.readouterr().err


def test_parse_thresholds() -> None:
    assert parse_thresholds("0.5:0.7:0.1") == [0.5, 0.6, 0.7]
    assert parse_thresholds("0.9") == [0.9]
    assert parse_thresholds("0.1,0.2") == [0.1, 0.2]
