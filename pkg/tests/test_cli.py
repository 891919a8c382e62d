import json
import subprocess
import sys

import pytest

from cmasd.cli import build_parser, main

from conftest import CORPUS


@pytest.fixture
def models(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text(CORPUS, encoding="utf-8")
    assert main(["train", "--corpus", str(corpus), "--order", "2", "--mode", "char", "--out", str(tmp_path / "d.ng")]) == 0
    assert main(["train", "--corpus", str(corpus), "--order", "4", "--mode", "char", "--out", str(tmp_path / "v.ng")]) == 0
    return tmp_path


def decode(capsys, *argv):
    code = main(["decode", *argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestTrain:
    def test_header_and_summary(self, tmp_path, capsys):
        corpus = tmp_path / "tiny.txt"
        corpus.write_text(CORPUS, encoding="utf-8")
        out = tmp_path / "verifier.ng"
        assert main(["train", "--corpus", str(corpus), "--order", "4", "--mode", "char", "--out", str(out)]) == 0
        assert out.read_text(encoding="utf-8").startswith("NGRAM v1 order=4 ")
        assert "vocab_size=" in capsys.readouterr().out

    def test_deterministic(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text(CORPUS, encoding="utf-8")
        for name in ("a.ng", "b.ng"):
            main(["train", "--corpus", str(corpus), "--order", "3", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.ng").read_bytes() == (tmp_path / "b.ng").read_bytes()

    def test_order_zero(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["train", "--corpus", "x", "--order", "0", "--out", str(tmp_path / "m")])
        assert info.value.code == 2

    def test_missing_corpus(self, tmp_path):
        assert main(["train", "--corpus", str(tmp_path / "nope"), "--order", "2", "--out", str(tmp_path / "m")]) == 2

    def test_empty_corpus(self, tmp_path):
        (tmp_path / "e.txt").write_text("", encoding="utf-8")
        assert main(["train", "--corpus", str(tmp_path / "e.txt"), "--order", "2", "--out", str(tmp_path / "m")]) == 2

    def test_bad_weights(self, tmp_path):
        (tmp_path / "c.txt").write_text("abc", encoding="utf-8")
        argv = ["train", "--corpus", str(tmp_path / "c.txt"), "--order", "2", "--weights", "0.3,0.3", "--out", "m"]
        assert main(argv) == 2


class TestDecode:
    def test_strict_cmasd_equals_greedy(self, models, capsys):
        common = ["--drafter", str(models / "d.ng"), "--verifier", str(models / "v.ng"), "--prompt", "the ",
                  "--max-len", "60"]
        c1, greedy_out, _ = decode(capsys, "--strategy", "greedy", *common)
        c2, cmasd_out, _ = decode(capsys, "--strategy", "cmasd", "--strict", *common)
        assert c1 == c2 == 0
        assert greedy_out.splitlines()[0] == cmasd_out.splitlines()[0]

    def test_reference_defaults_and_summary(self, models, capsys):
        code, out, _ = decode(
            capsys, "--strategy", "cmasd", "--k-max", "25", "--alpha", "1.0", "--tau-base", "0.1", "--gamma", "1.0",
            "--beta", "2", "--drafter", str(models / "d.ng"), "--verifier", str(models / "v.ng"), "--prompt", "a cat",
        )
        assert code == 0
        summary = out.splitlines()[-1]
        for key in ("tokens_out=", "tok/iter=", "rollbacks=", "mean_k_j="):
            assert key in summary

    def test_trace_and_out(self, models, capsys, tmp_path):
        trace, text = tmp_path / "t.jsonl", tmp_path / "o.txt"
        code, out, _ = decode(capsys, "--strategy", "specdec", "--k", "4", "--drafter", str(models / "d.ng"),
                              "--verifier", str(models / "v.ng"), "--trace-out", str(trace), "--out", str(text))
        assert code == 0
        recs = [json.loads(line) for line in trace.read_text().splitlines()]
        assert recs and all(r["k_j"] == 4 for r in recs)
        assert text.read_text(encoding="utf-8").rstrip("\n") == out.splitlines()[0]

    def test_missing_model(self, models, capsys):
        code, out, err = decode(capsys, "--drafter", str(models / "nope.ng"), "--verifier", str(models / "v.ng"))
        assert code == 2 and out == "" and "error" in err

    def test_vocab_mismatch(self, models, capsys, tmp_path):
        (tmp_path / "other.txt").write_text("xyz", encoding="utf-8")
        main(["train", "--corpus", str(tmp_path / "other.txt"), "--order", "2", "--out", str(tmp_path / "o.ng")])
        capsys.readouterr()
        code, out, err = decode(capsys, "--drafter", str(tmp_path / "o.ng"), "--verifier", str(models / "v.ng"))
        assert code == 2 and out == "" and "vocabular" in err

    def test_unknown_prompt_unit(self, models, capsys):
        code, out, _ = decode(capsys, "--drafter", str(models / "d.ng"), "--verifier", str(models / "v.ng"),
                              "--prompt", "QQQ")
        assert code == 2 and out == ""

    def test_bad_config(self, capsys):
        code, out, _ = decode(capsys, "--synthetic-p", "0.5", "--lambda-ent", "0.9")
        assert code == 2 and out == ""
        code, _, _ = decode(capsys, "--synthetic-p", "0.5", "--k-min", "9", "--k-max", "3")
        assert code == 2

    def test_synthetic_seed_env(self, capsys, monkeypatch):
        argv = ["--synthetic-p", "0.5", "--strategy", "greedy", "--max-len", "12"]
        _, base, _ = decode(capsys, *argv, "--seed", "5")
        monkeypatch.setenv("CMASD_SEED", "5")
        _, env, _ = decode(capsys, *argv, "--seed", "99")
        assert base == env

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["decode", "--synthetic-p", "0.5", "--bogus"])
        assert info.value.code == 2

    def test_help_lists_flags_with_defaults(self):
        sub = build_parser()._subparsers._group_actions[0].choices["decode"]
        text = sub.format_help()
        flags = ["--strategy", "--drafter", "--verifier", "--synthetic-p", "--peak-mass", "--prompt", "--prompt-file",
                 "--max-len", "--k", "--k-min", "--k-max", "--alpha", "--tau-base", "--gamma", "--beta",
                 "--tau-direction", "--lambda-ent", "--lambda-margin", "--lambda-soft", "--sharpness", "--strict",
                 "--seed", "--trace-out", "--out"]
        for flag in flags:
            assert flag in text
        for action in sub._actions:
            if action.dest != "help":
                assert "default" in (action.help % {"default": action.default, "prog": "x"} if "%" in action.help
                                     else sub._get_formatter()._expand_help(action))


class TestBench:
    def write_suite(self, path, payload):
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_strict_cmasd_row(self, models, capsys):
        suite = self.write_suite(models / "s.json", {
            "models": {"drafter": "d.ng", "verifier": "v.ng"},
            "prompts": ["the ", "dog"],
            "strategies": [{"type": "greedy"}, {"name": "cmasd-strict", "type": "cmasd", "strict": True}],
            "max_len": 40,
        })
        assert main(["bench", str(suite), "--out", str(models / "out")]) == 0
        table = capsys.readouterr().out
        assert "cmasd-strict" in table and "100.00" in table
        rows = (models / "out" / "report.csv").read_text().splitlines()
        assert all(r.split(",")[10] == "100.000000" for r in rows[1:])

    def test_geometric_column(self, tmp_path, capsys):
        suite = self.write_suite(tmp_path / "s.json", {
            "synthetic": {"p": 0.5, "peak_mass": 0.8},
            "seeds": [0, 1, 2],
            "max_len": 3000,
            "strategies": [{"name": "sd3", "type": "specdec", "k": 3, "strict": True}],
        })
        assert main(["bench", str(suite), "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        row = next(r for r in report["rows"] if r["strategy"] == "sd3")
        assert row["tok_per_iter"] == pytest.approx(0.875, rel=0.05)

    def test_rerun_identical(self, tmp_path):
        suite = self.write_suite(tmp_path / "s.json", {
            "synthetic": {"p": 0.7}, "seeds": [1, 2], "max_len": 100, "ablation": True,
        })
        for name in ("a", "b"):
            assert main(["bench", str(suite), "--out", str(tmp_path / name)]) == 0
        for f in ("report.csv", "report.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_malformed_suite(self, tmp_path, capsys):
        suite = tmp_path / "bad.json"
        suite.write_text('{"synthetic": {"p": 0.5},\n "strategies": [}', encoding="utf-8")
        assert main(["bench", str(suite)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_wall_clock_flag(self, tmp_path):
        suite = self.write_suite(tmp_path / "s.json", {"synthetic": {"p": 0.5}, "max_len": 10,
                                                        "strategies": [{"type": "greedy"}]})
        assert main(["bench", str(suite), "--out", str(tmp_path / "o"), "--wall-clock"]) == 0
        row = (tmp_path / "o" / "report.csv").read_text().splitlines()[1]
        assert int(row.split(",")[-1]) > 0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cmasd", "decode", "--synthetic-p", "0.9", "--max-len", "20"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "tokens_out=20" in res.stdout
