import argparse
import io
import json

import pytest

from cptsketch.cli import build_parser, resolve_config, run


def call(*argv):
    out = io.StringIO()
    code = run(list(argv), out)
    return code, out.getvalue()


@pytest.fixture(autouse=True)
def no_credentials(monkeypatch):
    for var in ("CPTSKETCH_API_KEY", "OPENAI_API_KEY", "CPTSKETCH_BASE_URL"):
        monkeypatch.delenv(var, raising=False)


def test_convert_rule():
    assert call("convert", "seq(a_1,a_2)", "--renderer", "rule") == \
        (0, "First, execute activity a_1. Then, execute activity a_2.\n")


def test_validate_loop_first_child():
    code, text = call("validate", "loop(a_1,a_2)")
    assert code != 0
    assert "loop-first-child-not-condition" in text


def test_validate_ok():
    assert call("validate", "seq(a_1,a_2)") == (0, "ok\n")


def test_validate_strict_labels():
    code, text = call("validate", '"free"', "--strict-labels")
    assert code == 1 and "bad-label" in text


def test_gen_single_leaf():
    assert call("gen", "--n", "1", "--depth", "1", "--seed", "7") == (0, "a_1\n")


def test_gen_is_deterministic():
    a = call("gen", "--n", "5", "--seed", "3")
    assert a == call("gen", "--n", "5", "--seed", "3")
    assert len(a[1].splitlines()) == 5


def test_gen_unicode():
    code, text = call("gen", "--n", "20", "--seed", "1", "--style", "unicode")
    assert code == 0 and "seq(" not in text


def test_tree_from_file_and_stdin(tmp_path, monkeypatch):
    path = tmp_path / "t.txt"
    path.write_text("seq(a_1,a_2)\n")
    expected = "First, execute activity a_1. Then, execute activity a_2.\n"
    assert call("convert", f"@{path}") == (0, expected)
    monkeypatch.setattr("sys.stdin", io.StringIO("seq(a_1,a_2)"))
    assert call("convert", "-") == (0, expected)


def test_missing_file_is_input_error():
    assert call("convert", "@/nonexistent/tree.txt")[0] == 1


def test_parse_error_exit_1(capsys):
    code, _ = call("convert", "seq(a_1")
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_bad_flag_exit_1(capsys):
    assert call("gen", "--bogus")[0] == 1
    assert call("gen", "--depth", "0")[0] == 1


def test_trace_sorted():
    code, text = call("trace", "→(a1,×_c1(∝(c2,a4),∧(a2,a3)))", "--loop-bound", "1")
    assert code == 0
    assert text.splitlines() == ["a_1", "a_1,a_2,a_3", "a_1,a_3,a_2", "a_1,a_4"]


def test_trace_bad_bound():
    assert call("trace", "a_1", "--loop-bound", "9")[0] == 1


def test_stats_tree():
    code, text = call("stats", "seq(a_1,xor_c_1(a_2,a_3))")
    assert code == 0
    assert json.loads(text)["node_count"] == 5


def test_stats_needs_argument():
    assert call("stats")[0] == 1


def test_baseline_prompt():
    code, text = call("baseline", "seq(a_1,a_2)")
    assert code == 0
    assert text.rstrip().endswith("### Conditional Process Tree\n→(a_1,a_2)")


def test_convert_mock_provenance():
    code, text = call("convert", "xor_c_1(a_1,a_2)", "--renderer", "mock", "--provenance")
    assert code == 0
    data = json.loads(text)
    assert data["text"] == "if c_1 then: execute activity a_1 else: execute activity a_2"


def test_llm_without_key_exits_2(capsys):
    code, _ = call("convert", "seq(a_1,a_2)", "--renderer", "llm")
    assert code == 2
    assert "API key" in capsys.readouterr().err


def test_dataset_and_corpus_stats(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    out = tmp_path / "d.jsonl"
    assert call("dataset", "--n", "12", "--seed", "2", "--out", str(out), "--jobs", "2")[0] == 0
    assert len(out.read_text().splitlines()) == 12
    assert call("dataset", "--n", "12", "--out", str(out))[0] == 2
    assert call("dataset", "--n", "14", "--seed", "2", "--out", str(out), "--resume")[0] == 0
    code, text = call("stats", "--corpus", str(out))
    assert code == 0 and json.loads(text)["records"] == 14


def test_suite_with_sheets(tmp_path):
    code, text = call("suite", "--out", str(tmp_path / "suite.jsonl"), "--sheets", str(tmp_path / "sheets"),
                      "--renderer", "rule", "--baseline", "mock")
    assert code == 0
    assert "Multi-layer Selection" in text
    assert len((tmp_path / "suite.jsonl").read_text().splitlines()) == 100
    names = sorted(p.name for p in (tmp_path / "sheets").iterdir())
    assert names == ["baseline-mock_items.csv", "baseline-mock_scores.csv", "rule_items.csv", "rule_scores.csv"]


def test_score(tmp_path):
    sheet = tmp_path / "s.csv"
    sheet.write_text("record_id,evaluator_id,score\nr1,a,1\nr1,b,1\nr1,c,0.5\n")
    assert call("score", str(sheet)) == (0, "83.33\n")


def test_config_redacts_key(monkeypatch, tmp_path):
    monkeypatch.setenv("CPTSKETCH_API_KEY", "sk-secret")
    code, text = call("config", "--depth", "3")
    assert code == 0
    assert "sk-secret" not in text
    data = json.loads(text)
    assert data["api_key"] == "***"
    assert data["gen"]["depth"] == 3


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gen": {"depth": 4, "seed": 9}, "base_url": "http://file"}))
    monkeypatch.setenv("CPTSKETCH_BASE_URL", "http://env")
    args = build_parser().parse_args(["--config", str(cfg), "gen", "--depth", "2"])
    resolved = resolve_config(args)
    assert resolved.gen.depth == 2
    assert resolved.gen.seed == 9
    assert resolved.base_url == "http://env"


def test_config_file_may_not_hold_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"api_key": "sk-x"}))
    assert call("--config", str(cfg), "config")[0] == 1


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            yield from action.choices.items()


def test_every_flag_is_documented():
    parser = build_parser()
    checked = 0
    for name, sub in [("", parser), *_subparsers(parser)]:
        text = sub.format_help()
        for action in sub._actions:
            if isinstance(action, (argparse._HelpAction, argparse._SubParsersAction)):
                continue
            assert action.help and action.help != argparse.SUPPRESS, (name, action.dest)
            for opt in action.option_strings:
                assert opt in text
            checked += 1
    assert checked > 40
