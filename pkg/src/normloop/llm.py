"""Provider-agnostic chat-completion client.

Two backend kinds behind one `complete` call:

* HTTP_CHAT — one POST against an OpenAI-compatible chat-completions
  endpoint, with exponential backoff on transient failures (timeouts,
  HTTP 429/5xx). The credential is read from a configured environment
  variable and never logged or stored.
* SCRIPTED — deterministic offline replay from a script file. Sequential
  mode returns recorded responses in file order; keyed mode (header line
  ``#mode=keyed``) looks responses up by request digest.

Script files are line-delimited ``<sha256-hex>\\t<base64(content)>``
records — diff-friendly and append-only via `record`.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "BackendConfig",
    "BackendError",
    "ChatClient",
    "ChatRequest",
    "ChatResponse",
    "CredentialMissing",
    "RetryPolicy",
    "ScriptExhausted",
    "ScriptMismatch",
    "TransportError",
    "complete",
    "load_backend_configs",
    "record",
    "request_digest",
]

KEYED_HEADER = "#mode=keyed"


class BackendError(Exception):
    """Base for transport-class failures (maps to CLI exit code 3)."""


class CredentialMissing(BackendError):
    pass


class TransportError(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class ScriptMismatch(BackendError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]  # (role, content), last role "user"
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[-1][0] != "user":
            raise ValueError("the last message must have role 'user'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: tuple[int, int] | None = None  # (prompt_tokens, completion_tokens)
    latency_ms: int = 0


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: int = 250


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # HTTP_CHAT | SCRIPTED
    model_id: str = "gpt-4"
    endpoint_url: str | None = None
    credential_env_var: str = "NORMLOOP_API_KEY"
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    script_path: str | None = None
    requests_per_minute: int = 60
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.kind == "HTTP_CHAT" and not self.endpoint_url:
            raise ValueError("HTTP_CHAT backend requires endpoint_url")
        if self.kind == "SCRIPTED" and not self.script_path:
            raise ValueError("SCRIPTED backend requires script_path")
        if self.kind not in ("HTTP_CHAT", "SCRIPTED"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


def request_digest(request: ChatRequest) -> str:
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "messages": [[r, c] for r, c in request.messages],
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def record(request: ChatRequest, response: ChatResponse, script_path: str | Path) -> None:
    """Append one (request digest, response content) record to a script file."""
    line = f"{request_digest(request)}\t" \
           f"{base64.b64encode(response.content.encode('utf-8')).decode('ascii')}\n"
    with open(script_path, "a", encoding="ascii") as fh:
        fh.write(line)


def _read_script(path: str | Path) -> tuple[bool, list[tuple[str, str]]]:
    keyed = False
    entries: list[tuple[str, str]] = []
    text = Path(path).read_text(encoding="ascii")
    for i, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.replace(" ", "") == KEYED_HEADER:
                keyed = True
            continue
        digest, _, b64 = line.partition("\t")
        if not b64:
            raise TransportError(f"malformed script record at line {i + 1} of {path}")
        entries.append((digest, base64.b64decode(b64).decode("utf-8")))
    return keyed, entries


class _TokenBucket:
    """Minimal thread-safe rate limiter: `rate_per_min` acquisitions/minute."""

    def __init__(self, rate_per_min: int):
        self.interval = 60.0 / max(rate_per_min, 1)
        self.next_free = 0.0
        self.lock = threading.Lock()

    def acquire(self) -> None:
        with self.lock:
            now = time.monotonic()
            wait = self.next_free - now
            self.next_free = max(self.next_free, now) + self.interval
        if wait > 0:
            time.sleep(wait)


class ChatClient:
    """One backend's stateful client: script cursor, rate limiter, retries.

    Safe for concurrent use; the scripted cursor and the limiter are locked.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self._lock = threading.Lock()
        self._bucket = _TokenBucket(config.requests_per_minute)
        self._script_loaded = False
        self._keyed = False
        self._sequential: list[tuple[str, str]] = []
        self._by_digest: dict[str, list[str]] = {}
        self._cursor = 0

    # -- scripted ---------------------------------------------------------
    def _ensure_script(self) -> None:
        if self._script_loaded:
            return
        assert self.config.script_path is not None
        try:
            self._keyed, entries = _read_script(self.config.script_path)
        except FileNotFoundError:
            raise TransportError(f"script file not found: {self.config.script_path}")
        self._sequential = entries
        for digest, content in entries:
            self._by_digest.setdefault(digest, []).append(content)
        self._script_loaded = True

    def _complete_scripted(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self._ensure_script()
            if self._keyed:
                queue = self._by_digest.get(request_digest(request))
                if not queue:
                    raise ScriptMismatch(
                        "no recorded response for request digest "
                        f"{request_digest(request)[:12]}…")
                content = queue.pop(0)
            else:
                if self._cursor >= len(self._sequential):
                    raise ScriptExhausted(
                        f"script has {len(self._sequential)} responses; "
                        f"call {self._cursor + 1} has nothing to replay")
                content = self._sequential[self._cursor][1]
                self._cursor += 1
        return ChatResponse(content=content, usage=None, latency_ms=0)

    # -- HTTP -------------------------------------------------------------
    def _complete_http(self, request: ChatRequest) -> ChatResponse:
        import requests as _requests  # deferred: scripted mode needs no HTTP stack

        key = os.environ.get(self.config.credential_env_var, "")
        if not key:
            raise CredentialMissing(
                f"environment variable {self.config.credential_env_var} is not set")

        payload = {
            "model": request.model_id or self.config.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        policy = self.config.retry
        last_error: Exception | None = None
        for attempt in range(max(policy.max_attempts, 1)):
            if attempt:
                time.sleep(policy.base_backoff_ms * (2 ** (attempt - 1)) / 1000.0)
            self._bucket.acquire()
            started = time.monotonic()
            try:
                resp = _requests.post(
                    self.config.endpoint_url,
                    json=payload,
                    headers={"Authorization": f"Bearer {key}"},
                    timeout=self.config.timeout_s,
                )
            except _requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            body = resp.json()
            try:
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                raise TransportError("malformed chat-completions response body")
            usage = None
            if isinstance(body.get("usage"), dict):
                u = body["usage"]
                if "prompt_tokens" in u and "completion_tokens" in u:
                    usage = (int(u["prompt_tokens"]), int(u["completion_tokens"]))
            latency = int((time.monotonic() - started) * 1000)
            return ChatResponse(content=content, usage=usage, latency_ms=latency)
        raise TransportError(
            f"gave up after {max(policy.max_attempts, 1)} attempts: {last_error}")

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.config.kind == "SCRIPTED":
            return self._complete_scripted(request)
        return self._complete_http(request)


_shared_clients: dict[BackendConfig, ChatClient] = {}
_shared_lock = threading.Lock()


def complete(request: ChatRequest, config: BackendConfig) -> ChatResponse:
    """Complete against a per-config shared client (scripted cursors and
    rate limits persist across calls with the same config)."""
    with _shared_lock:
        client = _shared_clients.get(config)
        if client is None:
            client = _shared_clients[config] = ChatClient(config)
    return client.complete(request)


def _parse_config_section(items: dict[str, str]) -> BackendConfig:
    def clean(v: str) -> str:
        return v.strip().strip("\"'")

    kind = clean(items.get("kind", "http_chat")).upper()
    retry = RetryPolicy(
        max_attempts=int(clean(items.get("retry_max_attempts", "3"))),
        base_backoff_ms=int(clean(items.get("retry_base_backoff_ms", "250"))),
    )
    return BackendConfig(
        kind=kind,
        model_id=clean(items.get("model_id", "gpt-4")),
        endpoint_url=clean(items["endpoint_url"]) if "endpoint_url" in items else None,
        credential_env_var=clean(items.get("credential_env_var", "NORMLOOP_API_KEY")),
        retry=retry,
        script_path=clean(items["script_path"]) if "script_path" in items else None,
        requests_per_minute=int(clean(items.get("requests_per_minute", "60"))),
        timeout_s=float(clean(items.get("timeout_s", "60"))),
    )


def load_backend_configs(path: str | Path) -> dict[str, BackendConfig]:
    """Read the key-value config file with [generation] and [verification]
    sections. Unquoted and quoted values are both accepted."""
    import configparser

    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    out = {}
    for section in ("generation", "verification"):
        if parser.has_section(section):
            out[section] = _parse_config_section(dict(parser.items(section)))
    return out
