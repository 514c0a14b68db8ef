"""CLI behavior: exit codes, --json schemas, convergence, layer weaving."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from codetations.cli import main

DATA = Path(__file__).parent / "data"

TAG_SCHEMA = {
    "type": "object",
    "required": ["id", "anchor", "context", "annotationType", "status", "data"],
    "properties": {
        "id": {"type": "string", "pattern": "^[0-9a-f-]{36}$"},
        "anchor": {
            "type": "object",
            "required": ["start", "end"],
            "properties": {"start": {"type": "integer"}, "end": {"type": "integer"}},
        },
        "context": {
            "type": "object",
            "required": ["anchorText", "prefix", "suffix"],
        },
        "annotationType": {"type": "string", "minLength": 1},
        "status": {"enum": ["attached", "orphaned", "proposed"]},
    },
}

CHECK_SCHEMA = {
    "type": "object",
    "required": ["files", "findings"],
    "properties": {
        "findings": {"type": "boolean"},
        "files": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "status", "annotations", "orphaned", "proposed"],
                "properties": {
                    "status": {"enum": ["fresh", "stale", "absent"]},
                    "annotations": {"type": "integer"},
                    "orphaned": {"type": "integer"},
                    "proposed": {"type": "integer"},
                },
            },
        },
    },
}

REATTACH_SCHEMA = {
    "type": "object",
    "required": ["path", "status", "proposals", "confirmed", "rejected", "orphaned"],
    "properties": {
        "status": {"enum": ["fresh", "stale"]},
        "proposals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tagId", "candidate", "candidateText", "score",
                             "strategy", "accepted"],
                "properties": {
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                    "strategy": {"enum": ["exact", "fuzzy", "semantic"]},
                },
            },
        },
        "confirmed": {"type": "array", "items": {"type": "string"}},
        "rejected": {"type": "array", "items": {"type": "string"}},
        "orphaned": {"type": "array", "items": {"type": "string"}},
    },
}

APPLY_LAYERS_SCHEMA = {
    "type": "object",
    "required": ["filesWritten", "insertions", "warnings"],
    "properties": {
        "filesWritten": {"type": "array", "items": {"type": "string"}},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "insertions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["source", "tagId", "layer", "offset",
                             "outputStart", "outputEnd"],
            },
        },
    },
}


@pytest.fixture
def repo_dir(tmp_path):
    (tmp_path / "main.py").write_text("def f():\n    return 42\n", encoding="utf-8")
    (tmp_path / ".git").mkdir()
    return tmp_path


def run(args, repo_dir, capsys):
    code = main(["--repo", str(repo_dir), *args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(args, repo_dir, capsys):
    code, out, err = run([*args, "--json"], repo_dir, capsys)
    return code, json.loads(out) if out.strip() else None, err


class TestBasicCommands:
    def test_init_creates_config(self, repo_dir, capsys):
        code, out, _ = run(["init"], repo_dir, capsys)
        assert code == 0
        assert (repo_dir / ".codetations" / "config.json").exists()

    def test_add_list_show_move_remove(self, repo_dir, capsys):
        code, tag, _ = run_json(
            ["add", "main.py", "--match", "return 42", "--type", "comment",
             "--data", '{"note": "answer"}'],
            repo_dir, capsys,
        )
        assert code == 0
        jsonschema.validate(tag, TAG_SCHEMA)
        assert tag["context"]["anchorText"] == "return 42"

        code, listed, _ = run_json(["list", "main.py"], repo_dir, capsys)
        assert code == 0 and len(listed["annotations"]) == 1
        jsonschema.validate(listed["annotations"][0], TAG_SCHEMA)

        code, shown, _ = run_json(["show", "main.py", tag["id"]], repo_dir, capsys)
        assert code == 0 and shown["id"] == tag["id"]

        code, moved, _ = run_json(
            ["move", "main.py", tag["id"], "--start", "0", "--end", "3"],
            repo_dir, capsys,
        )
        assert code == 0 and moved["context"]["anchorText"] == "def"

        code, removed, _ = run_json(["remove", "main.py", tag["id"]], repo_dir, capsys)
        assert code == 0 and removed == {"removed": tag["id"]}

    def test_match_ambiguity_is_an_error_never_a_guess(self, repo_dir, capsys):
        (repo_dir / "main.py").write_text("x = 1\nx = 1\n")
        code, _, err = run(
            ["add", "main.py", "--match", "x = 1", "--type", "c"], repo_dir, capsys
        )
        assert code == 1 and "ambiguous" in err

        code, _, err = run(
            ["add", "main.py", "--match", "nothing here", "--type", "c"],
            repo_dir, capsys,
        )
        assert code == 1 and "not found" in err

    def test_usage_errors_exit_2(self, repo_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--repo", str(repo_dir), "add", "main.py"])  # missing --type
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["--repo", str(repo_dir), "definitely-not-a-command"])
        assert exc.value.code == 2

    def test_operation_errors_exit_1(self, repo_dir, capsys):
        code, _, err = run(
            ["add", "missing.py", "--start", "0", "--end", "1", "--type", "c"],
            repo_dir, capsys,
        )
        assert code == 1 and "missing.py" in err


class TestCheckAndReattach:
    def seed(self, repo_dir, capsys):
        code, tag, _ = run_json(
            ["add", "main.py", "--match", "return 42", "--type", "comment"],
            repo_dir, capsys,
        )
        assert code == 0
        return tag

    def test_check_fresh_exits_0(self, repo_dir, capsys):
        self.seed(repo_dir, capsys)
        code, report, _ = run_json(["check"], repo_dir, capsys)
        jsonschema.validate(report, CHECK_SCHEMA)
        assert code == 0 and report["findings"] is False

    def test_check_reattach_check_converges(self, repo_dir, capsys):
        self.seed(repo_dir, capsys)
        (repo_dir / "main.py").write_text(
            "# leading comment\ndef f():\n    return 42\n", encoding="utf-8"
        )
        code, report, _ = run_json(["check"], repo_dir, capsys)
        assert code == 3 and report["findings"] is True
        assert report["files"][0]["status"] == "stale"

        code, reattach_report, _ = run_json(
            ["reattach", "main.py", "--yes"], repo_dir, capsys
        )
        jsonschema.validate(reattach_report, REATTACH_SCHEMA)
        assert code == 0
        assert reattach_report["proposals"][0]["strategy"] == "exact"
        assert reattach_report["proposals"][0]["score"] == 1.0

        code, report, _ = run_json(["check"], repo_dir, capsys)
        assert code == 0 and report["files"][0]["status"] == "fresh"

    def test_unchanged_file_reports_zero_proposals(self, repo_dir, capsys):
        self.seed(repo_dir, capsys)
        code, out, _ = run(["reattach", "main.py"], repo_dir, capsys)
        assert code == 0 and "0 proposal(s)" in out

    def test_below_threshold_reports_orphan_exit_3(self, repo_dir, capsys):
        tag = self.seed(repo_dir, capsys)
        (repo_dir / "main.py").write_text("entirely different content\n")
        code, report, _ = run_json(["reattach", "main.py", "--yes"], repo_dir, capsys)
        assert code == 3
        assert report["orphaned"] == [tag["id"]]
        # Orphan set is stable: a second run reports the same.
        code, report2, _ = run_json(["reattach", "main.py", "--yes"], repo_dir, capsys)
        assert code == 3 and report2["orphaned"] == [tag["id"]]

    def test_threshold_override(self, repo_dir, capsys):
        self.seed(repo_dir, capsys)
        (repo_dir / "main.py").write_text("def f():\n    return 43\n")
        code, strict, _ = run_json(
            ["reattach", "main.py", "--yes", "--threshold", "0.999"],
            repo_dir, capsys,
        )
        assert code == 3 and strict["proposals"] == []
        code, loose, _ = run_json(
            ["reattach", "main.py", "--yes", "--threshold", "0.5"], repo_dir, capsys
        )
        assert code == 0 and loose["proposals"]

    def test_semantic_without_provider_warns_and_falls_back(self, repo_dir, capsys):
        self.seed(repo_dir, capsys)
        (repo_dir / "main.py").write_text("# x\ndef f():\n    return 42\n")
        code, report, err = run_json(
            ["reattach", "main.py", "--yes", "--strategy", "semantic"],
            repo_dir, capsys,
        )
        assert code == 0
        assert "falling back to fuzzy" in err
        assert report["proposals"][0]["strategy"] == "exact"

    def test_exact_strategy_rejects_fuzzy_proposals(self, repo_dir, capsys):
        tag = self.seed(repo_dir, capsys)
        (repo_dir / "main.py").write_text("def f():\n    return 43\n")
        code, report, _ = run_json(
            ["reattach", "main.py", "--yes", "--strategy", "exact"], repo_dir, capsys
        )
        assert code == 3
        assert report["proposals"] == []
        assert report["orphaned"] == [tag["id"]]


class TestApplyLayersCli:
    def test_golden_selection_via_cli(self, tmp_path, capsys):
        repo = tmp_path / "repo"
        shutil.copytree(DATA / "layers_repo", repo)
        out_dir = tmp_path / "woven"
        code = main([
            "--repo", str(repo), "apply-layers", "--layers", "debug,perf",
            "--out", str(out_dir), "--json",
        ])
        captured = capsys.readouterr()
        assert code == 0
        report = json.loads(captured.out)
        jsonschema.validate(report, APPLY_LAYERS_SCHEMA)
        assert (out_dir / "app.c").read_text() == "a();\nlog();\ntick();\nb();\n"

    def test_stale_source_fails_with_exit_1(self, tmp_path, capsys):
        repo = tmp_path / "repo"
        shutil.copytree(DATA / "layers_repo", repo)
        (repo / "app.c").write_text("changed!\n")
        code = main([
            "--repo", str(repo), "apply-layers", "--layers", "debug",
            "--out", str(tmp_path / "w"),
        ])
        captured = capsys.readouterr()
        assert code == 1 and "app.c" in captured.err


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "codetations.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "apply-layers" in proc.stdout

class TestConfigFile:
    def test_reattach_reads_config_overrides(self, repo_dir, capsys):
        (repo_dir / ".codetations").mkdir()
        (repo_dir / ".codetations" / "config.json").write_text(
            json.dumps({"reattach": {"threshold": 0.999, "maxWindowSlack": 2}})
        )
        code, tag, _ = run_json(
            ["add", "main.py", "--match", "return 42", "--type", "comment"],
            repo_dir, capsys,
        )
        assert code == 0
        (repo_dir / "main.py").write_text("def f():\n    return 43\n")
        # The strict configured threshold orphans the near-miss...
        code, report, _ = run_json(["reattach", "main.py", "--yes"], repo_dir, capsys)
        assert code == 3 and report["proposals"] == []
        # ...and the command-line override takes precedence over the file.
        code, report, _ = run_json(
            ["reattach", "main.py", "--yes", "--threshold", "0.5"], repo_dir, capsys
        )
        assert code == 0 and report["confirmed"] == [tag["id"]]

    def test_malformed_config_is_an_operation_error(self, repo_dir, capsys):
        (repo_dir / ".codetations").mkdir()
        (repo_dir / ".codetations" / "config.json").write_text("{broken")
        code, _, err = run(
            ["add", "main.py", "--match", "return 42", "--type", "c"],
            repo_dir, capsys,
        )
        assert code == 1 and "config.json" in err
