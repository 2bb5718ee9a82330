"""Chat-completion clients.

Anything with a ``name`` and ``generate(prompt, params) -> str`` is a model
client. :class:`HTTPChatClient` talks to an OpenAI-compatible
``/chat/completions`` endpoint with bounded concurrency, retries with
exponential backoff, a per-request timeout, an optional request-rate bucket
and an audit log of every request and response.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Protocol, runtime_checkable

import httpx

log = logging.getLogger(__name__)

TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class ClientError(RuntimeError):
    """A generation could not be obtained (after retries, if transient)."""


class TransientError(ClientError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    max_tokens: int | None = None
    seed: int | None = None
    top_p: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingParams":
        return cls(**{k: d[k] for k in ("temperature", "max_tokens", "seed", "top_p") if k in d})


@runtime_checkable
class ModelClient(Protocol):
    name: str

    def generate(self, prompt: str, params: SamplingParams) -> str: ...


def _digest(message: dict) -> dict:
    content = message.get("content", "")
    return {
        "role": message.get("role"),
        "sha256": hashlib.sha256(content.encode("utf-8")).hexdigest(),
        "chars": len(content),
    }


class AuditLog:
    """Thread-safe, append-only list of client events.

    With ``full_bodies=False`` message contents in request bodies are
    replaced by their sha256 and length; the prompt text itself is kept in
    the response archives, so the log stays small for large grids.
    """

    TRANSPORT_KINDS = frozenset({"request", "response", "retry", "failure"})

    def __init__(self, full_bodies: bool = True):
        self.full_bodies = full_bodies
        self._lock = threading.Lock()
        self._entries: list[dict] = []

    def record(self, kind: str, **fields: Any) -> None:
        body = fields.get("body")
        if not self.full_bodies and isinstance(body, dict) and "messages" in body:
            fields["body"] = {**body, "messages": [_digest(m) for m in body["messages"]]}
        with self._lock:
            self._entries.append({"seq": len(self._entries), "kind": kind, **fields})

    @property
    def entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def transport_entries(self) -> list[dict]:
        return [e for e in self.entries if e["kind"] in self.TRANSPORT_KINDS]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True, default=str) + "\n")


class _TokenBucket:
    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = max(1.0, rate)
        self.tokens = self.capacity
        self.clock, self.sleep = clock, sleep
        self.last = clock()
        self.lock = threading.Lock()

    def take(self) -> None:
        while True:
            with self.lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
                self.last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    initial_backoff: float = 1.0
    multiplier: float = 2.0
    timeout: float = 60.0

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        return self.initial_backoff * self.multiplier ** (attempt - 1)


class HTTPChatClient:
    def __init__(
        self,
        name: str,
        model: str | None = None,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str | None = "OPENAI_API_KEY",
        retry: RetryPolicy | None = None,
        max_in_flight: int = 4,
        requests_per_second: float | None = None,
        audit: AuditLog | None = None,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.name = name
        self.model = model or name
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.retry = retry or RetryPolicy()
        self.audit = audit if audit is not None else AuditLog()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._bucket = _TokenBucket(requests_per_second, sleep=sleep) if requests_per_second else None
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(headers=headers, timeout=self.retry.timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _payload(self, prompt: str, params: SamplingParams, n: int) -> dict:
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        body.update(params.to_dict())
        if n != 1:
            body["n"] = n
        return body

    def _post(self, body: dict) -> dict:
        attempts = self.retry.max_attempts
        for attempt in range(1, attempts + 1):
            if self._bucket:
                self._bucket.take()
            self.audit.record("request", client=self.name, url=self.url, attempt=attempt, body=body)
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.TimeoutException as exc:
                err: ClientError = TransientError(f"timeout: {exc}")
            except httpx.TransportError as exc:
                err = TransientError(f"transport error: {exc}")
            else:
                self.audit.record(
                    "response", client=self.name, attempt=attempt, status=resp.status_code, body=resp.text
                )
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError:
                        err = ClientError("response is not JSON")
                elif resp.status_code in TRANSIENT_STATUS:
                    err = TransientError(f"HTTP {resp.status_code}")
                else:
                    err = ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if not isinstance(err, TransientError) or attempt == attempts:
                self.audit.record("failure", client=self.name, attempt=attempt, error=str(err))
                raise err
            delay = self.retry.delay(attempt)
            self.audit.record("retry", client=self.name, attempt=attempt, error=str(err), delay=delay)
            log.warning("%s: %s, retrying in %.1fs", self.name, err, delay)
            self._sleep(delay)
        raise AssertionError("unreachable")

    @staticmethod
    def _contents(data: dict) -> list[str]:
        try:
            return [c["message"]["content"] for c in data["choices"]]
        except (KeyError, TypeError) as exc:
            raise ClientError(f"malformed completion payload: {exc}") from None

    def generate(self, prompt: str, params: SamplingParams) -> str:
        with self._slots:
            return self._contents(self._post(self._payload(prompt, params, 1)))[0]

    def generate_n(self, prompt: str, params: SamplingParams, n: int) -> list[str]:
        """One request with the ``n`` parameter."""
        with self._slots:
            out = self._contents(self._post(self._payload(prompt, params, n)))
        if len(out) != n:
            raise ClientError(f"asked for {n} choices, got {len(out)}")
        return out
