import json
import threading
import time

import httpx
import pytest

from cptsketch.errors import AuthError, CacheMiss, LLMError, MalformedResponse, RateLimited, Timeout
from cptsketch.llm import (
    AuditLog,
    ChatClient,
    ModelParams,
    RateLimiter,
    ResponseCache,
    cache_key,
    request_body,
    warm_cache_from_audit,
)
from cptsketch.model import OperatorKind
from cptsketch.sketch import LLMRenderer, PromptRecord, construct_prompt, generate_bpts

PROMPT = construct_prompt(OperatorKind.SEQUENCE, ["execute activity a_1", "execute activity a_2"])


def ok(text="merged"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


class Recorder:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        item = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(item, Exception):
            raise item
        return item


def client_for(handler, **kw):
    kw.setdefault("api_key", "sk-test")
    kw.setdefault("sleep", lambda s: None)
    return ChatClient(transport=httpx.MockTransport(handler), **kw)


def test_request_body_defaults():
    body = request_body(PROMPT, ModelParams())
    assert (body["temperature"], body["top_p"], body["n"]) == (0.0, 1.0, 1)
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert body["messages"][0]["content"] == PROMPT.instruction
    assert body["messages"][1]["content"] == PROMPT.input_block


def test_single_user_layout():
    msgs = request_body(PROMPT, ModelParams(layout="single-user"))["messages"]
    assert len(msgs) == 1 and msgs[0]["role"] == "user"
    assert msgs[0]["content"].startswith(PROMPT.instruction)
    assert msgs[0]["content"].endswith(PROMPT.input_block)


def test_bad_layout():
    with pytest.raises(ValueError):
        ModelParams(layout="chat")


def test_override_logs_warning(caplog):
    with caplog.at_level("WARNING"):
        ModelParams(temperature=0.7)
    assert "temperature" in caplog.text


def test_wire_request():
    rec = Recorder(ok())
    client = client_for(rec)
    assert client.complete(PROMPT) == "merged"
    req = rec.requests[0]
    assert req.url.path.endswith("/chat/completions")
    assert req.headers["authorization"] == "Bearer sk-test"
    sent = json.loads(req.content)
    assert sent == request_body(PROMPT, ModelParams())


def test_cache_hit_skips_network():
    rec = Recorder(ok())
    client = client_for(rec)
    client.complete(PROMPT)
    client.complete(PROMPT)
    assert client.network_calls == 1
    assert len(rec.requests) == 1


def test_cache_key_is_content_addressed():
    p = ModelParams()
    same = PromptRecord(PROMPT.instruction, PROMPT.input_block, PROMPT.operator)
    assert cache_key(same, p) == cache_key(PROMPT, p)
    assert cache_key(PROMPT, ModelParams(model_id="other")) != cache_key(PROMPT, p)
    assert cache_key(PROMPT, ModelParams(layout="single-user")) != cache_key(PROMPT, p)
    other = construct_prompt(OperatorKind.PARALLEL, ["x", "y"])
    assert cache_key(other, p) != cache_key(PROMPT, p)


def test_disk_cache_persists(tmp_path):
    client_for(Recorder(ok("stored")), cache=ResponseCache(tmp_path)).complete(PROMPT)
    again = ChatClient(cache=ResponseCache(tmp_path), offline=True)
    assert again.complete(PROMPT) == "stored"
    assert again.network_calls == 0


def test_offline_miss():
    with pytest.raises(CacheMiss):
        ChatClient(offline=True).complete(PROMPT)


def test_retry_then_success():
    sleeps = []
    rec = Recorder(httpx.Response(500), httpx.Response(503), ok())
    client = client_for(rec, sleep=sleeps.append, backoff=0.5)
    assert client.complete(PROMPT) == "merged"
    assert client.network_calls == 3
    assert sleeps == [0.5, 1.0]


def test_persistent_429_raises_rate_limited():
    rec = Recorder(httpx.Response(429))
    client = client_for(rec)
    with pytest.raises(RateLimited):
        client.complete(PROMPT, ModelParams(max_retries=2))
    assert client.network_calls == 3


def test_timeout():
    rec = Recorder(httpx.ReadTimeout("slow"))
    with pytest.raises(Timeout):
        client_for(rec).complete(PROMPT, ModelParams(max_retries=1))


@pytest.mark.parametrize("status", [401, 403])
def test_auth_rejected_not_retried(status):
    rec = Recorder(httpx.Response(status))
    client = client_for(rec)
    with pytest.raises(AuthError):
        client.complete(PROMPT)
    assert client.network_calls == 1


def test_missing_key(monkeypatch):
    monkeypatch.delenv("CPTSKETCH_API_KEY", raising=False)
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    rec = Recorder(ok())
    client = ChatClient(transport=httpx.MockTransport(rec))
    with pytest.raises(AuthError):
        client.complete(PROMPT)
    assert rec.requests == []


def test_client_error_not_retried():
    client = client_for(Recorder(httpx.Response(400, text="bad")))
    with pytest.raises(LLMError):
        client.complete(PROMPT)
    assert client.network_calls == 1


@pytest.mark.parametrize("payload", [{}, {"choices": []}, {"choices": [{"message": {"content": 3}}]}])
def test_malformed(payload):
    with pytest.raises(MalformedResponse):
        client_for(Recorder(httpx.Response(200, json=payload))).complete(PROMPT)


def test_mock_echo_and_no_network():
    client = ChatClient(mock=True)
    assert client.complete(PROMPT) == PROMPT.input_block
    assert client.network_calls == 0
    assert client.cache.memory == {}


def test_mock_canned():
    client = ChatClient(mock=True, canned={"seq": "canned seq"})
    assert client.complete(PROMPT) == "canned seq"
    par = construct_prompt(OperatorKind.PARALLEL, ["x", "y"])
    assert client.complete(par) == par.input_block


def test_mock_deterministic_over_many_calls():
    client = ChatClient(mock=True)
    first = client.complete(PROMPT)
    assert all(client.complete(PROMPT) == first for _ in range(1000))


def test_rate_limiter_with_fake_clock():
    now = [0.0]
    stamps = []

    def sleep(s):
        now[0] += s

    limiter = RateLimiter(5, clock=lambda: now[0], sleep=sleep)
    for _ in range(23):
        limiter.acquire()
        stamps.append(now[0])
    for t in stamps:
        assert sum(1 for u in stamps if t <= u < t + 60) <= 5
    assert stamps[5] >= 60


def test_in_flight_bound():
    active = [0]
    peak = [0]
    lock = threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return ok(json.loads(request.content)["messages"][1]["content"])

    client = client_for(handler, max_in_flight=2)
    prompts = [construct_prompt(OperatorKind.SEQUENCE, [f"x{i}", "y"]) for i in range(12)]
    threads = [threading.Thread(target=client.complete, args=(p,)) for p in prompts]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert client.network_calls == 12
    assert peak[0] <= 2


def test_audit_replay_reproduces_sketch(tmp_path, sample_tree):
    audit_path = tmp_path / "audit.jsonl"

    def handler(request):
        block = json.loads(request.content)["messages"][1]["content"]
        return ok(f"<{block}>")

    live = client_for(handler, audit=AuditLog(audit_path))
    first = generate_bpts(sample_tree, LLMRenderer(live))
    entries = [json.loads(line) for line in audit_path.read_text().splitlines()]
    assert len(entries) == 4
    assert {e["source"] for e in entries} == {"network"}
    assert set(entries[0]) == {"ts", "cache_key", "request", "response", "latency_ms", "source"}

    cache = ResponseCache(tmp_path / "cache")
    assert warm_cache_from_audit(audit_path, cache) == 4
    replay = ChatClient(cache=cache, offline=True)
    second = generate_bpts(sample_tree, LLMRenderer(replay))
    assert second.text == first.text
    assert second.node_sketches == first.node_sketches
    assert replay.network_calls == 0


def test_mock_entries_are_audited_but_not_replayed(tmp_path):
    audit_path = tmp_path / "a.jsonl"
    ChatClient(mock=True, audit=AuditLog(audit_path)).complete(PROMPT)
    assert json.loads(audit_path.read_text())["source"] == "mock"
    assert warm_cache_from_audit(audit_path, ResponseCache()) == 0
