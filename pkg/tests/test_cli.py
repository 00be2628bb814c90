import json
import os
import stat

from chiselforge.cli import main
from conftest import CHISEL_SNIPPET, write_jsonl


def snapshot(root):
    return {str(p.relative_to(root)) for p in root.rglob("*")}


def chisel_corpus(tmp_path, n=3):
    root = tmp_path / "corpus"
    root.mkdir()
    for i in range(n):
        (root / f"m{i}.scala").write_text(
            CHISEL_SNIPPET.replace("PassThrough", f"PassThrough{i}")
        )
    return root


class TestDispatch:
    def test_no_args_usage_exit_1(self, capsys):
        assert main([]) == 1
        assert "Usage" in capsys.readouterr().err

    def test_unknown_subcommand_exit_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_input_exit_1(self, capsys):
        assert main(["eval", "--in", "missing.jsonl"]) == 1
        assert "input not found" in capsys.readouterr().err

    def test_bad_config_file_exit_1(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.json"), "eval", "--in", "x"]) == 1


class TestDryRun:
    def test_dataset_mix_dry_run_plan(self, tmp_path, capsys):
        c = write_jsonl(tmp_path / "c.jsonl", [{"sample_id": "c0", "prompt_text": "x"}])
        d = write_jsonl(tmp_path / "d.jsonl", [{"sample_id": "d0", "prompt_text": "x"}])
        before = snapshot(tmp_path)
        code = main(["dataset", "mix", "--completion", str(c), "--decompile", str(d),
                     "--ratio", "3:7", "--total", "10", "--seed", "1",
                     "--out", str(tmp_path / "mix.jsonl"), "--dry-run"])
        assert code == 0
        assert "3 + 7" in capsys.readouterr().out
        assert snapshot(tmp_path) == before  # dry-run purity

    def test_corpus_ingest_dry_run_no_writes(self, tmp_path, capsys):
        root = chisel_corpus(tmp_path)
        before = snapshot(tmp_path)
        code = main(["corpus", "ingest", "--root", str(root), "--lang", "chisel",
                     "--out", str(tmp_path / "samples.jsonl"), "--dry-run"])
        assert code == 0
        assert snapshot(tmp_path) == before
        assert "plan:" in capsys.readouterr().out


class TestCorpusCommand:
    def test_ingest_writes_samples_report_and_manifest(self, tmp_path):
        root = chisel_corpus(tmp_path)
        out = tmp_path / "out" / "samples.jsonl"
        code = main(["corpus", "ingest", "--root", str(root), "--lang", "chisel",
                     "--task", "decompile", "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert out.with_suffix(".jsonl.report.txt").exists()
        manifest = json.loads((out.parent / "samples.jsonl.run.json").read_text())
        assert manifest["config_hash"]
        assert len(manifest["output_artifacts"]) == 2


class TestDocsCommand:
    def test_build_outputs_fragments_and_index(self, tmp_path):
        docs = tmp_path / "docs"
        docs.mkdir()
        (docs / "a.md").write_text("# Wires\nAll about wires.\n## Details\nmore\n")
        out = tmp_path / "frags.jsonl"
        assert main(["docs", "build", "--root", str(docs), "--out", str(out)]) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert [d["chapter_id"] for d in lines] == ["1", "1.1"]
        index_doc = out.with_suffix(".jsonl.index.txt").read_text()
        assert "[1] Wires" in index_doc

    def test_empty_docs_dir_exit_1(self, tmp_path, capsys):
        docs = tmp_path / "docs"
        docs.mkdir()
        assert main(["docs", "build", "--root", str(docs), "--out", str(tmp_path / "o")]) == 1


class TestStatsCommand:
    def test_json_output(self, tmp_path, capsys):
        p = write_jsonl(tmp_path / "d.jsonl", [
            {"prompt_text": "a b c", "think_text": "", "answer_code": ""}])
        assert main(["dataset", "stats", "--in", str(p), "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["mean"] == 3


def fake_toolchain_config(tmp_path, compile_exit=0):
    tooldir = tmp_path / "tools"
    tooldir.mkdir(exist_ok=True)

    def script(name, body):
        p = tooldir / name
        p.write_text("#!/bin/sh\n" + body)
        p.chmod(p.stat().st_mode | stat.S_IEXEC)
        return p

    script("compile.sh", f"exit {compile_exit}\n")
    script("elab.sh", 'printf "module %s\\n" "$2" > "$1"\nexit 0\n')
    cfg = {
        "toolchain": {
            "compile_cmd": str(tooldir / "compile.sh"),
            "elaborate_cmd": f"{tooldir}/elab.sh {{sv_file}} {{top}}",
            "simulate_cmd": "",
        }
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    return cfg_path


class TestEvalCommand:
    def completions(self, tmp_path, n=5):
        return write_jsonl(tmp_path / "completions.jsonl", [
            {"problem_id": "p0", "prompt": "spec",
             "completions": ["```scala\nclass Top extends Module {}\n```"] * n},
        ])

    def test_eval_reports_table_columns(self, tmp_path, capsys):
        cfg = fake_toolchain_config(tmp_path)
        comps = self.completions(tmp_path)
        code = main(["--config", str(cfg), "eval", "--in", str(comps), "--k", "1,5"])
        assert code == 0
        out = capsys.readouterr().out
        assert "P@1" in out and "P@5" in out and "Syn(%)" in out

    def test_eval_json_mode(self, tmp_path, capsys):
        cfg = fake_toolchain_config(tmp_path)
        comps = self.completions(tmp_path)
        assert main(["--config", str(cfg), "eval", "--in", str(comps),
                     "--k", "1", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["syn_percent"] == 100.0

    def test_missing_tool_exit_2(self, tmp_path):
        cfg = {"toolchain": {"compile_cmd": str(tmp_path / "no-such-tool"),
                             "elaborate_cmd": "true"}}
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(cfg))
        comps = self.completions(tmp_path, n=1)
        assert main(["--config", str(cfg_path), "eval", "--in", str(comps), "--k", "1"]) == 2


class TestJudgeCommand:
    def test_judge_with_mock(self, tmp_path, capsys):
        comps = write_jsonl(tmp_path / "completions.jsonl", [
            {"problem_id": "p0", "prompt": "A counter spec.",
             "completions": ["class C extends Module {}"]},
        ])
        fixture = tmp_path / "mock.json"
        fixture.write_text(json.dumps([
            {"pattern": "propose three", "response":
                "variant: Configurable - width\n"
                "variant: Functional - down mode\n"
                "variant: Structural - gray code\n"},
            {"pattern": "Evaluation standard", "response": "Solid.\nSCORE: 7"},
        ]))
        code = main(["judge", "--in", str(comps), "--mock-llm", str(fixture), "--json"])
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["overall_mean"] == 7.0
        assert data["counts"]["used"] == 1
