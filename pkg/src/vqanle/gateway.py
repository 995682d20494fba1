"""Uniform interface to text+image generation and sentence embeddings.

Two backends share one surface: ``RemoteGateway`` speaks the chat-completion
wire shape over HTTP, and ``MockGateway`` is a pure function of
(seed, request) so whole pipeline runs replay bit-identically offline.  Both
enforce a global in-flight request cap.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

import requests

MOCK_EMBED_DIM = 256

_TOKEN_RE = re.compile(r"\S+")


class GatewayError(Exception):
    """Fatal backend failure for one request."""


class TransportError(GatewayError):
    """Transient transport failure; retried up to the configured bound."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 1.0
    top_p: float = 1.0
    top_k: int = 50
    do_sample: bool = False
    max_new_tokens: int = 1500

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")

    def with_budget(self, max_new_tokens: int) -> "DecodingParams":
        return DecodingParams(
            temperature=self.temperature,
            top_p=self.top_p,
            top_k=self.top_k,
            do_sample=self.do_sample,
            max_new_tokens=max_new_tokens,
        )


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    image: Optional[str] = None  # transport-encoded (base64 PNG)
    params: DecodingParams = field(default_factory=DecodingParams)
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be nonempty")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)


def truncate_tokens(text: str, max_tokens: int) -> str:
    """Cut after the Nth whitespace token, preserving original whitespace."""
    matches = list(_TOKEN_RE.finditer(text))
    if len(matches) <= max_tokens:
        return text
    return text[: matches[max_tokens - 1].end()]


class Gateway:
    """Shared concurrency bookkeeping; subclasses implement the transport."""

    def __init__(self, model: str, parallelism: int = 4) -> None:
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.model = model
        self.parallelism = parallelism
        self._sem = threading.Semaphore(parallelism)
        self._lock = threading.Lock()
        self._inflight = 0
        self.max_inflight_seen = 0
        self._embed_dim: Optional[int] = None

    @contextmanager
    def _slot(self) -> Iterator[None]:
        with self._sem:
            with self._lock:
                self._inflight += 1
                self.max_inflight_seen = max(self.max_inflight_seen, self._inflight)
            try:
                yield
            finally:
                with self._lock:
                    self._inflight -= 1

    def generate(self, request: GenerationRequest) -> str:
        with self._slot():
            return self._generate(request)

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        with self._slot():
            vec = self._embed(text)
        if self._embed_dim is None:
            self._embed_dim = vec.dimension
        elif vec.dimension != self._embed_dim:
            raise GatewayError(
                f"embedding dimension drifted from {self._embed_dim} to {vec.dimension}"
            )
        return vec

    def _generate(self, request: GenerationRequest) -> str:
        raise NotImplementedError

    def _embed(self, text: str) -> EmbeddingVector:
        raise NotImplementedError


def _token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def mock_embedding(text: str, dim: int = MOCK_EMBED_DIM) -> EmbeddingVector:
    """Token-bucket hash projection, L2-normalized.

    Each lowercased whitespace token increments one of ``dim`` buckets, so
    the vector is order-insensitive and texts over disjoint, non-colliding
    token sets are orthogonal.
    """
    counts = [0.0] * dim
    for token in text.lower().split():
        counts[_token_bucket(token, dim)] += 1.0
    norm = sum(c * c for c in counts) ** 0.5
    if norm == 0:
        raise ValueError("cannot embed whitespace-only text")
    return EmbeddingVector(values=tuple(c / norm for c in counts))


class MockGateway(Gateway):
    """Scripted, seeded backend for offline runs.

    Completions are looked up by the request tag, which pipelines format as
    ``<template id>/<image id>/<slot>``: first an exact-tag entry, then a
    per-template default, then deterministic filler derived from
    (seed, tag).  The script is read-only after construction.
    """

    def __init__(
        self,
        seed: int = 0,
        script: Optional[dict[str, Any]] = None,
        model: str = "mock",
        parallelism: int = 4,
        embed_dim: int = MOCK_EMBED_DIM,
    ) -> None:
        super().__init__(model=model, parallelism=parallelism)
        self.seed = seed
        self.embed_dim = embed_dim
        script = script or {}
        if "exact" in script or "by_template" in script:
            self._exact = dict(script.get("exact", {}))
            self._by_template = dict(script.get("by_template", {}))
        else:
            self._exact = dict(script)
            self._by_template = {}

    @classmethod
    def from_script_file(cls, path: str | Path, **kwargs: Any) -> "MockGateway":
        script = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(script=script, **kwargs)

    _FILLER = (
        "the image shows a scene with several everyday objects arranged in view"
    ).split()

    def _lookup(self, tag: str) -> str:
        if tag in self._exact:
            return self._exact[tag]
        template_id = tag.split("/", 1)[0]
        if template_id in self._by_template:
            return self._by_template[template_id]
        rng = random.Random(f"{self.seed}/{tag}")
        return " ".join(rng.choices(self._FILLER, k=12))

    def _generate(self, request: GenerationRequest) -> str:
        return truncate_tokens(self._lookup(request.tag), request.params.max_new_tokens)

    def _embed(self, text: str) -> EmbeddingVector:
        return mock_embedding(text, self.embed_dim)


class RemoteGateway(Gateway):
    """Chat-completion HTTP backend.

    One user message carries the prompt and, when present, the image as a
    data URL.  Decoding parameters pass through verbatim; the backend owns
    their interpretation.  Transport failures retry up to ``max_retries``
    with linear backoff, then surface as ``TransportError`` for that request.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        auth_token: Optional[str] = None,
        parallelism: int = 4,
        max_retries: int = 3,
        timeout: float = 120.0,
        retry_wait: float = 1.0,
        session: Optional[requests.Session] = None,
    ) -> None:
        super().__init__(model=model, parallelism=parallelism)
        self.base_url = base_url.rstrip("/")
        self.auth_token = auth_token
        self.max_retries = max_retries
        self.timeout = timeout
        self.retry_wait = retry_wait
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        return headers

    def _post(self, path: str, body: dict[str, Any], tag: str) -> dict[str, Any]:
        last: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}{path}",
                    json=body,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code >= 500:
                    last = TransportError(f"{resp.status_code} from backend for {tag!r}")
                elif resp.status_code >= 400:
                    raise GatewayError(
                        f"backend rejected request {tag!r}: {resp.status_code} {resp.text[:500]}"
                    )
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise GatewayError(f"non-JSON response for {tag!r}: {exc}") from exc
            if attempt < self.max_retries and self.retry_wait > 0:
                threading.Event().wait(self.retry_wait * (attempt + 1))
        raise TransportError(f"transport failed for {tag!r} after {self.max_retries + 1} attempts: {last}")

    def _generate(self, request: GenerationRequest) -> str:
        content: list[dict[str, Any]] = [{"type": "text", "text": request.prompt}]
        if request.image is not None:
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{request.image}"},
                }
            )
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": request.params.max_new_tokens,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "top_k": request.params.top_k,
            "do_sample": request.params.do_sample,
        }
        payload = self._post("/v1/chat/completions", body, request.tag)
        if "error" in payload:
            raise GatewayError(f"backend error for {request.tag!r}: {payload['error']}")
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion payload for {request.tag!r}") from exc

    def _embed(self, text: str) -> EmbeddingVector:
        payload = self._post("/v1/embeddings", {"model": self.model, "input": text}, "embed")
        if "error" in payload:
            raise GatewayError(f"backend error for embedding: {payload['error']}")
        try:
            values = payload["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("malformed embedding payload") from exc
        return EmbeddingVector(values=tuple(float(v) for v in values))
