"""Command-line interface: subcommands, exit codes, file handoffs."""

import json
from pathlib import Path

import pytest

from vismine.cli import main
from vismine.jsonl import read_jsonl
from tests.conftest import FIXTURE_DIR


def fx(name: str) -> str:
    return str(FIXTURE_DIR / name)


class TestRunCommand:
    def test_composite_run(self, fixture_config, capsys):
        config = fixture_config("cli_run")
        assert main(["run", "--config", str(config)]) == 0
        out_dir = Path(json.loads(config.read_text())["out_dir"])
        assert (out_dir / "stage3_labels.jsonl").exists()
        assert "pipeline complete" in capsys.readouterr().out

    def test_validation_failure_exit_code(self, fixture_config, capsys):
        config = fixture_config(
            "cli_bad",
            stage1={"k": 0, "backends": ["primary", "secondary"]},
            corpus="missing.jsonl",
        )
        assert main(["run", "--config", str(config)]) == 1
        err = capsys.readouterr().err
        assert "k must be >= 1" in err

    def test_missing_upstream_is_runtime_failure(self, fixture_config):
        config = fixture_config("cli_partial")
        assert main(["run", "--config", str(config), "--stages", "stage3"]) == 2


class TestStageCommands:
    def test_stagewise_handoff(self, fixture_config, tmp_path):
        config = str(fixture_config("cli_stages"))
        work = tmp_path / "work"
        work.mkdir()

        assert main([
            "ingest", "--corpus", fx("corpus.jsonl"),
            "--out", str(work / "corpus.jsonl"),
            "--report", str(work / "report.json"),
        ]) == 0
        report = json.loads((work / "report.json").read_text())
        assert report["total"] == 13
        assert report["after_keyword_filter"] == 12

        assert main([
            "stage1", "--corpus", str(work / "corpus.jsonl"), "--pool", fx("pool.jsonl"),
            "--k", "6", "--min-pos", "2", "--min-neg", "2",
            "--out", str(work / "subset.jsonl"), "--log", str(work / "decisions.jsonl"),
            "--config", config,
        ]) == 0
        subset = [r["paper_id"] for r in read_jsonl(work / "subset.jsonl")]
        assert subset == ["P01", "P02", "P03", "P07", "P10", "P12"]
        assert len(list(read_jsonl(work / "decisions.jsonl"))) == 12

        assert main([
            "evidence", "--docs-manifest", fx("docs_manifest.jsonl"),
            "--docs-dir", fx("docs"), "--out", str(work / "evidence.jsonl"),
        ]) == 0
        assert len(list(read_jsonl(work / "evidence.jsonl"))) == 30

        assert main([
            "stage2", "--papers", str(work / "subset.jsonl"),
            "--evidence", str(work / "evidence.jsonl"), "--library", fx("library.jsonl"),
            "--k", "5", "--max-figs", "3",
            "--out", str(work / "verdicts.jsonl"), "--config", config,
        ]) == 0
        verdicts = list(read_jsonl(work / "verdicts.jsonl"))
        assert len(verdicts) == 10
        assert sum(1 for v in verdicts if v["selected"]) == 6

        assert main([
            "stage3", "--figures", str(work / "verdicts.jsonl"),
            "--evidence", str(work / "evidence.jsonl"), "--library", fx("library.jsonl"),
            "--k", "10", "--cap", "3",
            "--out", str(work / "labels.jsonl"), "--config", config,
        ]) == 0
        labels = list(read_jsonl(work / "labels.jsonl"))
        assert len(labels) == 6

        assert main([
            "analyze", "--labels", str(work / "labels.jsonl"),
            "--papers", str(work / "corpus.jsonl"), "--library", fx("library.jsonl"),
            "--ref-year", "2026", "--out-dir", str(work / "analysis"),
        ]) == 0
        assert (work / "analysis" / "sankey.json").exists()
        assert (work / "analysis" / "trends.csv").exists()
        assert (work / "analysis" / "weights.csv").exists()
        paths = list(read_jsonl(work / "analysis" / "paths.jsonl"))
        assert len(paths) == 15

    def test_eval_command(self, fixture_config, tmp_path, capsys):
        config = str(fixture_config("cli_eval"))
        work = tmp_path / "evalwork"
        work.mkdir()
        assert main([
            "evidence", "--docs-manifest", fx("docs_manifest.jsonl"),
            "--docs-dir", fx("docs"), "--out", str(work / "evidence.jsonl"),
        ]) == 0
        assert main([
            "eval", "--pool", fx("pool.jsonl"), "--corpus", fx("corpus.jsonl"),
            "--figures", fx("library.jsonl"), "--evidence", str(work / "evidence.jsonl"),
            "--stages", "1,2,3", "--shots", "0,6",
            "--out", str(work / "report.json"), "--config", config,
        ]) == 0
        report = json.loads((work / "report.json").read_text())
        assert report["fold_counts"] == {"stage1": 6, "stage2": 3, "stage3": 3}
        assert report["rows"]
        out = capsys.readouterr().out
        assert "leakage violations: 0" in out


class TestEntryPoint:
    def test_help_exits_cleanly(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0

    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            main(["paint"])
