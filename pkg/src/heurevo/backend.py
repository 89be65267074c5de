"""Text-completion backends: a chat HTTP endpoint and a deterministic mock.

The http kind speaks the common chat-completions wire shape and retries
transport failures, 429 and 5xx with jittered exponential backoff. The
mock kind picks canned replies by a stable hash of the prompt, which
keeps whole evolution runs reproducible without network access.
"""

from __future__ import annotations

import hashlib
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

_MAX_BACKOFF = 30.0


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class Timeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class EmptyPool(ValueError):
    pass


def stable_hash(text: str) -> int:
    """Process-independent 64-bit hash, unlike builtin hash()."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint_url: str = ""
    model_id: str = ""
    api_key_env: str = ""
    temperature: float = 1.0
    max_tokens: int = 1024
    request_timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    max_concurrent: int = 4
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("http", "mock"):
            raise ValueError("kind must be http or mock, got %r" % self.kind)
        if self.kind == "http" and not (self.endpoint_url and self.model_id):
            raise ValueError("http backend needs endpoint_url and model_id")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    temperature: float | None = None
    max_tokens: int | None = None
    request_id: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


def mock_complete(pool: list[str], request: ChatRequest, rng_seed: int) -> str:
    """Pick a canned reply keyed by the prompt hash and the run seed."""
    if not pool:
        raise EmptyPool("mock backend needs at least one canned reply")
    return pool[(stable_hash(request.prompt) ^ rng_seed) % len(pool)]


class Backend:
    """Completion client with retry, rate limiting and a query counter.

    The counter counts successful completions only, never attempts, and
    an optional on-disk cache (off by default) answers repeats without
    touching the counter.
    """

    def __init__(self, config: BackendConfig, pool: list[str] | None = None,
                 rng_seed: int = 0) -> None:
        if config.kind == "mock" and not pool:
            raise EmptyPool("mock backend needs at least one canned reply")
        self.config = config
        self.pool = list(pool or [])
        self.rng_seed = rng_seed
        self._queries = 0
        self._lock = threading.Lock()
        self._gate = threading.BoundedSemaphore(config.max_concurrent)

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def complete(self, request: ChatRequest) -> str:
        with self._gate:
            cached = self._cache_read(request)
            if cached is not None:
                return cached
            if self.config.kind == "mock":
                reply = mock_complete(self.pool, request, self.rng_seed)
            else:
                reply = self._complete_http(request)
            with self._lock:
                self._queries += 1
            self._cache_write(request, reply)
            return reply

    def _cache_path(self, request: ChatRequest) -> Path | None:
        if not self.config.cache_dir:
            return None
        temperature = (self.config.temperature if request.temperature is None
                       else request.temperature)
        key = "%s\n%d\n%r" % (self.config.model_id, stable_hash(request.prompt),
                              temperature)
        name = hashlib.sha256(key.encode("utf-8")).hexdigest() + ".txt"
        return Path(self.config.cache_dir) / name

    def _cache_read(self, request: ChatRequest) -> str | None:
        path = self._cache_path(request)
        if path is None or not path.is_file():
            return None
        return path.read_text(encoding="utf-8")

    def _cache_write(self, request: ChatRequest, reply: str) -> None:
        path = self._cache_path(request)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(reply, encoding="utf-8")

    def _complete_http(self, request: ChatRequest) -> str:
        config = self.config
        api_key = os.environ.get(config.api_key_env or "", "")
        if not api_key:
            raise AuthError("environment variable %r is not set"
                            % (config.api_key_env or "api_key_env"))
        payload = {
            "model": config.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": (config.temperature if request.temperature is None
                            else request.temperature),
            "max_tokens": (config.max_tokens if request.max_tokens is None
                           else request.max_tokens),
        }
        headers = {"Authorization": "Bearer " + api_key}

        last_error: BackendError = BackendError("no attempt made")
        for attempt in range(config.max_retries + 1):
            if attempt:
                delay = min(_MAX_BACKOFF, config.backoff_base * 2 ** (attempt - 1))
                time.sleep(delay * (0.8 + 0.4 * random.random()))
            try:
                response = requests.post(config.endpoint_url, json=payload,
                                         headers=headers,
                                         timeout=config.request_timeout)
            except requests.Timeout as exc:
                last_error = Timeout("request timed out: %s" % exc)
                continue
            except requests.RequestException as exc:
                last_error = BackendError("transport error: %s" % exc)
                continue

            status = response.status_code
            if status in (401, 403):
                raise AuthError("endpoint rejected the key (HTTP %d)" % status)
            if status == 429:
                last_error = RateLimited("rate limited (HTTP 429)")
                continue
            if status >= 500:
                last_error = BackendError("server error (HTTP %d)" % status)
                continue
            if status != 200:
                raise BackendError("unexpected HTTP %d: %s"
                                   % (status, response.text[:200]))
            return _extract_content(response)
        raise last_error


def _extract_content(response) -> str:
    try:
        data = response.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse("cannot read completion: %s" % exc) from exc
    if not isinstance(content, str):
        raise MalformedResponse("completion content is not text")
    return content
