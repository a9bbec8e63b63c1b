"""Chat-completion and text-embedding backends behind uniform contracts.

Two implementations ship for each contract: a remote HTTP client (chat
completions wire shape, see docs/protocol.md) and a deterministic local one
used by tests and offline runs. The stub chat provider replays scripted
responses keyed by a hash of the request and refuses to fabricate output.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests

from .errors import ProviderFailure, ScriptMiss
from .kgstore import tokenize

LOCAL_EMBED_DIM = 256
DEFAULT_RETRY_LIMIT = 3
DEFAULT_BACKOFF_SECONDS = 0.5
DEFAULT_MAX_CONCURRENCY = 4
DEFAULT_TIMEOUT_SECONDS = 60.0

ENV_API_KEY = "LLM_API_KEY"
ENV_BASE_URL = "LLM_BASE_URL"
ENV_EMBED_BASE_URL = "EMBED_BASE_URL"


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    messages: tuple[tuple[str, str], ...]
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class EmbeddingVector:
    values: np.ndarray
    source_hash: str

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


class ChatProvider(Protocol):
    def chat_complete(self, request: ChatRequest) -> str: ...


class Embedder(Protocol):
    def embed_text(self, text: str) -> EmbeddingVector: ...


def script_key(system_text: str, messages: tuple[tuple[str, str], ...], seed: int) -> str:
    """Deterministic lookup key for scripted stub responses."""
    payload = json.dumps(
        {"system": system_text, "messages": [list(m) for m in messages], "seed": seed},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def request_key(request: ChatRequest) -> str:
    return script_key(request.system_text, request.messages, request.seed)


class StubChatProvider:
    """Replays scripted responses; same request always yields identical bytes."""

    def __init__(self, scripts: dict[str, str] | None = None):
        self.scripts = dict(scripts or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "StubChatProvider":
        scripts: dict[str, str] = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            stripped = raw.strip()
            if not stripped:
                continue
            record = json.loads(stripped)
            scripts[record["key_hash"]] = record["response_text"]
        return cls(scripts)

    def chat_complete(self, request: ChatRequest) -> str:
        key = request_key(request)
        if key not in self.scripts:
            raise ScriptMiss(key)
        return self.scripts[key]


def write_script_file(path: str | Path, scripts: dict[str, str]) -> None:
    lines = [
        json.dumps({"key_hash": k, "response_text": scripts[k]}, sort_keys=True, ensure_ascii=False)
        for k in sorted(scripts)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class RemoteChatProvider:
    """HTTP chat-completions client with bounded retries and capped concurrency.

    Transient transport errors, rate limits and 5xx responses are retried with
    exponential backoff; an advertised Retry-After delay takes precedence.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        retry_limit: int = DEFAULT_RETRY_LIMIT,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no base URL configured (set {ENV_BASE_URL})")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.retry_limit = retry_limit
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep
        self._semaphore = threading.Semaphore(max_concurrency)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def chat_complete(self, request: ChatRequest) -> str:
        body = {
            "model": request.model,
            "messages": [{"role": "system", "content": request.system_text}]
            + [{"role": role, "content": text} for role, text in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        }
        url = f"{self.base_url}/chat/completions"
        attempts = 0
        last_error = "unknown error"
        while attempts <= self.retry_limit:
            attempts += 1
            delay = self.backoff_seconds * (2 ** (attempts - 1))
            try:
                with self._semaphore:
                    response = self.session.post(
                        url, json=body, headers=self._headers(), timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                if attempts <= self.retry_limit:
                    self._sleep(delay)
                continue
            if response.status_code == 200:
                try:
                    return response.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise ProviderFailure(f"malformed completion body: {exc}", attempts) from exc
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"status {response.status_code}"
                retry_after = response.headers.get("Retry-After")
                if retry_after is not None:
                    try:
                        delay = float(retry_after)
                    except ValueError:
                        pass
                if attempts <= self.retry_limit:
                    self._sleep(delay)
                continue
            raise ProviderFailure(f"status {response.status_code}: {response.text}", attempts)
        raise ProviderFailure(last_error, attempts)


def _token_bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class LocalHashEmbedder:
    """Deterministic hashed bag-of-tokens embedding.

    A test double with stable geometry, not a claim of semantic fidelity:
    tokens share a bucket only on hash collision, so unrelated short texts are
    near-orthogonal. Text with at least one token yields a unit vector; text
    that normalizes to nothing yields the zero vector.
    """

    def __init__(self, dim: int = LOCAL_EMBED_DIM):
        self.dim = dim

    def embed_text(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            values[_token_bucket(token, self.dim)] += 1.0
        norm = float(np.linalg.norm(values))
        if norm > 0:
            values /= norm
        return EmbeddingVector(values=values, source_hash=text_hash(text))


class RemoteEmbedder:
    """Embedding endpoint client; passes the service's vector through unchanged."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str = "default",
        retry_limit: int = DEFAULT_RETRY_LIMIT,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(ENV_EMBED_BASE_URL, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no embedding base URL configured (set {ENV_EMBED_BASE_URL})")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model
        self.retry_limit = retry_limit
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep
        self._dimension: int | None = None

    def embed_text(self, text: str) -> EmbeddingVector:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        attempts = 0
        last_error = "unknown error"
        while attempts <= self.retry_limit:
            attempts += 1
            try:
                response = self.session.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": text},
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                if attempts <= self.retry_limit:
                    self._sleep(self.backoff_seconds * (2 ** (attempts - 1)))
                continue
            if response.status_code == 200:
                try:
                    values = np.asarray(
                        response.json()["data"][0]["embedding"], dtype=np.float64
                    )
                except (KeyError, IndexError, ValueError) as exc:
                    raise ProviderFailure(f"malformed embedding body: {exc}", attempts) from exc
                if self._dimension is None:
                    self._dimension = int(values.shape[0])
                elif values.shape[0] != self._dimension:
                    raise ProviderFailure(
                        f"embedding dimension changed from {self._dimension} "
                        f"to {values.shape[0]}",
                        attempts,
                    )
                return EmbeddingVector(values=values, source_hash=text_hash(text))
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"status {response.status_code}"
                if attempts <= self.retry_limit:
                    self._sleep(self.backoff_seconds * (2 ** (attempts - 1)))
                continue
            raise ProviderFailure(f"status {response.status_code}: {response.text}", attempts)
        raise ProviderFailure(last_error, attempts)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    denom = float(np.linalg.norm(a.values)) * float(np.linalg.norm(b.values))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / denom)
