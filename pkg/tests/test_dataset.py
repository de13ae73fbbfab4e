import json

import pytest

from cptsketch.errors import AuthError, CorruptRecord, EmptySuite, RendererFailure, SinkError
from cptsketch.dataset import (
    dataset_report,
    failures_path,
    iter_records,
    produce_dataset,
    record_id,
    timestamp,
)
from cptsketch.generator import GenParams, default_params
from cptsketch.llm import ChatClient
from cptsketch.model import OperatorKind, stats
from cptsketch.notation import parse
from cptsketch.sketch import CallableRenderer, LLMRenderer, RuleRenderer

FIXED = "2024-01-01T00:00:00Z"


def clock():
    return FIXED


def _lines(path):
    return [json.loads(ln) for ln in path.read_text().splitlines()]


def test_single_leaf_record(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(GenParams(depth=1), 1, RuleRenderer(), out, clock=clock)
    (rec,) = _lines(out)
    assert rec["cpt"] == "a_1"
    assert rec["bpts"] == "execute activity a_1"
    assert rec["stats"]["node_count"] == 1
    assert rec["id"] == record_id(GenParams(depth=1), 0)
    assert len(rec["id"]) == 16
    assert list(rec) == ["id", "index", "cpt", "bpts", "stats", "renderer_id", "model_params",
                         "gen_params", "template_checksum", "prompt_audit", "created_at"]


def test_records_are_consistent(tmp_path):
    out = tmp_path / "d.jsonl"
    summary = produce_dataset(default_params(seed=4), 40, RuleRenderer(), out, clock=clock)
    assert summary.written == 40 and summary.failures == 0
    recs = _lines(out)
    assert [r["index"] for r in recs] == list(range(40))
    for r in recs:
        assert stats(parse(r["cpt"])).as_dict() == r["stats"]
        assert r["renderer_id"] == "rule"
        assert r["created_at"] == FIXED


def test_parallel_jobs_same_output(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    produce_dataset(default_params(seed=9), 30, RuleRenderer(), a, clock=clock)
    produce_dataset(default_params(seed=9), 30, RuleRenderer(), b, jobs=4, clock=clock)
    assert a.read_bytes() == b.read_bytes()


def test_mock_llm_records_prompt_audit(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(seed=2), 5, LLMRenderer(ChatClient(mock=True)), out,
                    renderer_name="mock", clock=clock)
    for r in _lines(out):
        ops = r["stats"]["operator_count"]
        assert len(r["prompt_audit"]) == ops
        assert r["renderer_id"] == "mock"
        assert r["model_params"]["temperature"] == 0.0


def test_existing_file_needs_resume_or_force(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(), 3, RuleRenderer(), out, clock=clock)
    with pytest.raises(SinkError):
        produce_dataset(default_params(), 3, RuleRenderer(), out, clock=clock)
    produce_dataset(default_params(), 2, RuleRenderer(), out, force=True, clock=clock)
    assert len(_lines(out)) == 2


@pytest.mark.parametrize("torn", [False, True])
def test_resume_after_interruption(tmp_path, torn):
    full, part = tmp_path / "full.jsonl", tmp_path / "part.jsonl"
    gen = default_params(seed=11)
    produce_dataset(gen, 25, RuleRenderer(), full, clock=clock)
    lines = full.read_bytes().splitlines(keepends=True)
    cut = b"".join(lines[:10])
    if torn:
        cut += lines[10][:17]
    part.write_bytes(cut)
    summary = produce_dataset(gen, 25, RuleRenderer(), part, resume=True, clock=clock)
    assert summary.resumed == 10
    assert summary.written == 15
    ids = [r["id"] for r in _lines(part)]
    assert len(ids) == len(set(ids)) == 25
    assert part.read_bytes() == full.read_bytes()


def test_resume_on_complete_file_writes_nothing(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(), 5, RuleRenderer(), out, clock=clock)
    before = out.read_bytes()
    assert produce_dataset(default_params(), 5, RuleRenderer(), out, resume=True, clock=clock).written == 0
    assert out.read_bytes() == before


def _flaky(kind, subs, cond):
    if kind is OperatorKind.LOOP:
        raise RuntimeError("renderer gave up")
    return "ok"


def test_failures_go_to_sidecar(tmp_path):
    out = tmp_path / "d.jsonl"
    summary = produce_dataset(default_params(seed=5), 30, CallableRenderer(_flaky), out, clock=clock)
    assert summary.failures > 0
    assert summary.written + summary.failures == 30
    side = [json.loads(ln) for ln in failures_path(out).read_text().splitlines()]
    assert len(side) == summary.failures
    assert all("renderer gave up" in f["error"] for f in side)
    report = dataset_report(out)
    assert report.failures == summary.failures


def test_auth_error_aborts():
    def denied(kind, subs, cond):
        raise AuthError("no key")

    with pytest.raises(RendererFailure) as info:
        list(iter_records(default_params(), 3, CallableRenderer(denied)))
    assert isinstance(info.value.cause, AuthError)


def test_report_against_recount(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(seed=8), 50, RuleRenderer(), out, clock=clock)
    report = dataset_report(out)
    nodes = [r["stats"]["node_count"] for r in _lines(out)]
    acts = [r["stats"]["activity_count"] for r in _lines(out)]
    assert report.records == 50
    assert report.renderers == {"rule": 50}
    assert (report.table.node_max, report.table.node_min) == (max(nodes), min(nodes))
    assert (report.table.activity_max, report.table.activity_min) == (max(acts), min(acts))
    assert report.as_dict()["records"] == 50


def test_report_flags_corrupt_line(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(seed=8), 3, RuleRenderer(), out, clock=clock)
    lines = out.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["stats"]["node_count"] += 1
    lines[1] = json.dumps(rec)
    out.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptRecord) as info:
        dataset_report(out)
    assert info.value.line == 2


def test_report_flags_duplicate(tmp_path):
    out = tmp_path / "d.jsonl"
    produce_dataset(default_params(), 2, RuleRenderer(), out, clock=clock)
    first = out.read_text().splitlines()[0]
    out.write_text(out.read_text() + first + "\n")
    with pytest.raises(CorruptRecord) as info:
        dataset_report(out)
    assert info.value.line == 3


def test_report_on_empty_file(tmp_path):
    out = tmp_path / "d.jsonl"
    out.write_text("")
    with pytest.raises(EmptySuite):
        dataset_report(out)


def test_timestamp_honours_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert timestamp() == "1970-01-01T00:00:00Z"
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    assert timestamp().endswith("Z")


def test_resume_retries_failures(tmp_path):
    out = tmp_path / "d.jsonl"
    first = produce_dataset(default_params(seed=5), 30, CallableRenderer(_flaky), out, clock=clock)
    second = produce_dataset(default_params(seed=5), 30, RuleRenderer(), out, resume=True, clock=clock)
    assert second.written == first.failures
    assert not failures_path(out).exists()
    assert dataset_report(out).records == 30
