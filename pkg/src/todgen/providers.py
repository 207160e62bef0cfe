"""Language-model providers.

Every provider exposes ``complete(prompt, temperature=0.7, seed=None) -> str``.
``ScriptedProvider`` replays canned replies (by ordinal or by prompt hash) and
is deterministic; ``RemoteProvider`` talks to an OpenAI-compatible chat
completions endpoint with a concurrency cap and retry-with-backoff.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Callable, Protocol, TypeVar, runtime_checkable

from .errors import ParseError, ProviderError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7

T = TypeVar("T")


@runtime_checkable
class LLMProvider(Protocol):
    def complete(self, prompt: str, temperature: float = DEFAULT_TEMPERATURE, seed: int | None = None) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedProvider:
    """Deterministic provider backed by canned replies.

    Lookup order: exact prompt hash in ``by_hash``, then the next entry of
    ``replies`` (consumed in order), then ``fallback(prompt)``.  A reply that is
    an Exception instance is raised instead of returned, which lets tests
    script transport failures.
    """

    def __init__(self, replies=None, by_hash=None, fallback: Callable[[str], str] | None = None):
        self.replies = list(replies or [])
        self.by_hash = dict(by_hash or {})
        self.fallback = fallback
        self.calls: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, fallback=None) -> "ScriptedProvider":
        """Load ``{"replies": [...], "by_hash": {sha256: reply}}`` from JSON."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(replies=data, fallback=fallback)
        return cls(replies=data.get("replies"), by_hash=data.get("by_hash"), fallback=fallback)

    def complete(self, prompt: str, temperature: float = DEFAULT_TEMPERATURE, seed: int | None = None) -> str:
        with self._lock:
            self.calls.append(prompt)
            key = prompt_hash(prompt)
            if key in self.by_hash:
                reply = self.by_hash[key]
            elif self.replies:
                reply = self.replies.pop(0)
            elif self.fallback is not None:
                reply = None
            else:
                raise ProviderError("scripted provider exhausted")
        if reply is None:
            reply = self.fallback(prompt)
        if isinstance(reply, BaseException):
            raise reply
        return reply


class RemoteProvider:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        max_concurrent: int = 4,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
        transport=None,
    ):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str, temperature: float = DEFAULT_TEMPERATURE, seed: int | None = None) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        if seed is not None:
            body["seed"] = seed
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(f"{self.endpoint}/chat/completions", json=body, headers=self._headers())
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = ProviderError(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                log.warning("provider call failed (attempt %d): %s", attempt + 1, exc)
        raise ProviderError(f"remote provider failed after {self.retries + 1} attempts: {last_error}")


def with_retries(fn: Callable[[], T], retries: int, retry_on=(ParseError, ProviderError)) -> T:
    """Call ``fn`` up to ``retries + 1`` times; re-raise the last error."""
    for attempt in range(retries + 1):
        try:
            return fn()
        except retry_on:
            if attempt == retries:
                raise
    raise AssertionError("unreachable")
