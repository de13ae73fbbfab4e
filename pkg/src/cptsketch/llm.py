"""Chat-completion client used by the LLM renderer.

Real calls go through a content-addressed response cache, a sliding-window
rate limiter and bounded in-flight slots.  Every call, mock or real, lands in
an append-only JSONL audit log.  Mock mode answers locally and never touches
the network or the cache.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import httpx

from .errors import AuthError, CacheMiss, LLMError, MalformedResponse, RateLimited, Timeout

log = logging.getLogger(__name__)

API_KEY_ENV = "CPTSKETCH_API_KEY"
FALLBACK_KEY_ENV = "OPENAI_API_KEY"
BASE_URL_ENV = "CPTSKETCH_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
LAYOUTS = ("system-user", "single-user")


@dataclass(frozen=True)
class ModelParams:
    model_id: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    top_p: float = 1.0
    n: int = 1
    max_retries: int = 3
    timeout: float = 30.0
    requests_per_minute: int = 60
    max_in_flight: int = 4
    layout: str = "system-user"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.requests_per_minute < 1 or self.max_in_flight < 1 or self.max_retries < 0:
            raise ValueError("rate, in-flight and retry limits must be positive")
        for name, default in (("temperature", 0.0), ("top_p", 1.0), ("n", 1)):
            if getattr(self, name) != default:
                log.warning("decoding parameter %s overridden: %r (default %r)",
                            name, getattr(self, name), default)

    def as_dict(self) -> dict:
        return asdict(self)


def system_text(prompt) -> str:
    if prompt.examples:
        return f"{prompt.instruction}\n\n{prompt.examples}"
    return prompt.instruction


def cache_key(prompt, params: ModelParams) -> str:
    payload = json.dumps(
        [system_text(prompt), prompt.input_block, params.model_id, params.temperature, params.top_p,
         params.layout],
        ensure_ascii=False, separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_messages(prompt, layout: str) -> list:
    if not system_text(prompt):
        return [{"role": "user", "content": prompt.input_block}]
    if layout == "single-user":
        return [{"role": "user", "content": f"{system_text(prompt)}\n\n{prompt.input_block}"}]
    return [
        {"role": "system", "content": system_text(prompt)},
        {"role": "user", "content": prompt.input_block},
    ]


def request_body(prompt, params: ModelParams) -> dict:
    return {
        "model": params.model_id,
        "messages": build_messages(prompt, params.layout),
        "temperature": params.temperature,
        "top_p": params.top_p,
        "n": params.n,
    }


def mock_complete(prompt, canned: Optional[dict] = None) -> str:
    """Echo the input block, or return a canned reply keyed by operator kind."""
    if canned:
        op = prompt.operator
        for key in (op, getattr(op, "value", op)):
            if key in canned:
                return canned[key]
    return prompt.input_block


class RateLimiter:
    """At most ``rpm`` acquisitions in any window of ``window`` seconds."""

    def __init__(self, rpm: int, window: float = 60.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rpm = rpm
        self.window = window
        self.clock = clock
        self.sleep = sleep
        self.stamps: deque = deque()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        with self.lock:
            while True:
                now = self.clock()
                while self.stamps and now - self.stamps[0] >= self.window:
                    self.stamps.popleft()
                if len(self.stamps) < self.rpm:
                    self.stamps.append(now)
                    return
                self.sleep(self.window - (now - self.stamps[0]))


class ResponseCache:
    """Content-addressed responses; in memory when ``root`` is None."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self.memory: dict = {}
        self.lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        with self.lock:
            if key in self.memory:
                return self.memory[key]
        if self.root is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        response = json.loads(path.read_text(encoding="utf-8"))["response"]
        with self.lock:
            self.memory[key] = response
        return response

    def put(self, key: str, response: str, request: Optional[dict] = None) -> None:
        with self.lock:
            self.memory[key] = response
        if self.root is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"key": key, "request": request, "response": response}, fh, ensure_ascii=False)
        os.replace(tmp, path)


class AuditLog:
    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.lock = threading.Lock()
        self.entries: list = []

    def append(self, key: str, request: dict, response: str, latency_ms: float, source: str) -> None:
        entry = {
            "ts": time.time(),
            "cache_key": key,
            "request": request,
            "response": response,
            "latency_ms": round(latency_ms, 3),
            "source": source,
        }
        with self.lock:
            self.entries.append(entry)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def warm_cache_from_audit(audit_path, cache: ResponseCache) -> int:
    """Load audited non-mock responses into ``cache``; returns how many."""
    count = 0
    with open(audit_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                if entry.get("source") == "mock":
                    continue
                cache.put(entry["cache_key"], entry["response"], entry.get("request"))
                count += 1
    return count


class ChatClient:
    """Completion client.

    ``mock=True`` answers with :func:`mock_complete`; ``offline=True`` serves
    only cached responses and raises :class:`CacheMiss` otherwise.
    """

    def __init__(self, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 cache: Optional[ResponseCache] = None, audit: Optional[AuditLog] = None,
                 transport: Optional[httpx.BaseTransport] = None, mock: bool = False,
                 canned: Optional[dict] = None, offline: bool = False,
                 max_in_flight: int = 4, limiter: Optional[RateLimiter] = None,
                 sleep: Callable[[float], None] = time.sleep, backoff: float = 1.0):
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else (
            os.environ.get(API_KEY_ENV) or os.environ.get(FALLBACK_KEY_ENV))
        self.cache = cache if cache is not None else ResponseCache()
        self.audit = audit if audit is not None else AuditLog()
        self.transport = transport
        self.mock = mock
        self.canned = canned
        self.offline = offline
        self.slots = threading.BoundedSemaphore(max_in_flight)
        self.limiter = limiter
        self.sleep = sleep
        self.backoff = backoff
        self.network_calls = 0
        self._http: Optional[httpx.Client] = None
        self._lock = threading.Lock()

    def _client(self, params: ModelParams) -> httpx.Client:
        with self._lock:
            if self._http is None:
                self._http = httpx.Client(transport=self.transport, timeout=params.timeout)
            return self._http

    def complete(self, prompt, params: Optional[ModelParams] = None) -> str:
        params = params or ModelParams()
        key = cache_key(prompt, params)
        body = request_body(prompt, params)
        started = time.perf_counter()
        if self.mock:
            # mock replies never enter the cache, so a shared cache dir stays clean
            response = mock_complete(prompt, self.canned)
            self.audit.append(key, body, response, (time.perf_counter() - started) * 1000, "mock")
            return response
        cached = self.cache.get(key)
        if cached is not None:
            self.audit.append(key, body, cached, (time.perf_counter() - started) * 1000, "cache")
            return cached
        if self.offline:
            raise CacheMiss(f"no cached response for key {key}")
        response = self._request(body, params)
        self.cache.put(key, response, body)
        self.audit.append(key, body, response, (time.perf_counter() - started) * 1000, "network")
        return response

    def _request(self, body: dict, params: ModelParams) -> str:
        if not self.api_key:
            raise AuthError(f"no API key; set {API_KEY_ENV}")
        if self.limiter is None:
            self.limiter = RateLimiter(params.requests_per_minute)
        headers = {"Authorization": f"Bearer {self.api_key}"}
        url = f"{self.base_url}/chat/completions"
        last: Exception = LLMError("no attempt made")
        for attempt in range(params.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            with self.slots:
                self.network_calls += 1
                try:
                    resp = self._client(params).post(url, json=body, headers=headers)
                except httpx.TimeoutException as exc:
                    last = Timeout(f"request timed out: {exc}")
                    continue
                except httpx.TransportError as exc:
                    last = LLMError(f"transport error: {exc}")
                    continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
            if resp.status_code == 429:
                last = RateLimited("endpoint rate limit persisted after retries")
                continue
            if resp.status_code >= 500:
                last = LLMError(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise LLMError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
            return _first_choice(resp)
        raise last

    def close(self) -> None:
        if self._http is not None:
            self._http.close()


def _first_choice(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected response shape: {exc}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("choice content is not text")
    return content
