"""Stance-relevant context extraction: source-text summaries and image captions.

Two backends sit behind :class:`ContextClient`:

* ``stub``: deterministic local functions. The summarizer is extractive (it
  returns input sentences verbatim) and the captioner is a fixed template
  over image statistics. No network access.
* ``external``: an HTTP service speaking ``POST /v1/summarize`` and
  ``POST /v1/caption`` with JSON bodies.

Results are cached under a content hash of (kind, backend, topic, prompt,
payload digest), so moving or renaming files never re-invokes a backend.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .encoders import ImageTensor, decode_image, encode_rawimg, read_image_bytes
from .errors import ContractError, DataError, TransportError
from .text import split_tokens

log = logging.getLogger(__name__)

DEFAULT_CAPTION_PROMPT = "Generate the caption for the image"
DEFAULT_SUMMARIZE_PROMPT = "Summarize the following text with respect to the topic: {topic}"

_STOPWORDS = frozenset(
    "a an and are as at be by for from in into is it of on or over than that the their this to under with".split()
)
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


class ContextKind(str, enum.Enum):
    SUMMARIZE = "SUMMARIZE"
    CAPTION = "CAPTION"


@dataclass(frozen=True)
class ContextRequest:
    kind: ContextKind
    topic: str
    prompt: str
    text: str | None = None
    image_ref: str | None = None

    def __post_init__(self):
        if not self.prompt.strip():
            raise ContractError("context request needs a non-empty prompt")
        if self.kind is ContextKind.SUMMARIZE and not self.text:
            raise DataError("summarize request needs non-empty text")
        if self.kind is ContextKind.CAPTION and not self.image_ref:
            raise DataError("caption request needs an image reference")


@dataclass(frozen=True)
class ContextResult:
    output: str
    backend: str
    cache_hit: bool = False

    def __post_init__(self):
        if not self.output:
            raise TransportError(f"{self.backend} backend returned an empty result")


# --------------------------------------------------------------------------- stubs


def _keywords(topic: str) -> set[str]:
    return {t for t in split_tokens(topic) if t.isalnum() and t not in _STOPWORDS}


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text.strip()) if s.strip()]


def stub_summary(text: str, topic: str, k: int = 2) -> str:
    """Pick the ``k`` sentences densest in topic keywords, earliest first on ties.

    The chosen sentences are returned verbatim, in document order.
    """
    sentences = split_sentences(text)
    if not sentences:
        raise DataError("cannot summarize empty text")
    keys = _keywords(topic)

    def density(sentence: str) -> float:
        toks = [t for t in split_tokens(sentence) if t.isalnum()]
        return sum(t in keys for t in toks) / max(1, len(toks))

    ranked = sorted(range(len(sentences)), key=lambda i: (-density(sentences[i]), i))
    return " ".join(sentences[i] for i in sorted(ranked[:k]))


def stub_caption(pixels: np.ndarray, digest: str, topic: str) -> str:
    brightness = float(np.mean(pixels))
    return f"image {digest[:12]}: {topic} related visual content (brightness={brightness:.2f})"


class StubBackend:
    name = "stub"

    def __init__(self, summary_sentences: int = 2):
        self.summary_sentences = summary_sentences
        self.cache_tag = f"stub:k={summary_sentences}"

    def summarize(self, text: str, topic: str, prompt: str) -> str:
        return stub_summary(text, topic, self.summary_sentences)

    def caption(self, blob: bytes, pixels: np.ndarray, digest: str, topic: str, prompt: str) -> str:
        return stub_caption(pixels, digest, topic)


class HttpBackend:
    """Client for the external summarize/caption service."""

    name = "external"

    def __init__(self, base_url: str, timeout: float = 30.0, transport=None):
        import httpx

        self._httpx = httpx
        self.cache_tag = f"external:{base_url}"
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def _post(self, route: str, body: dict, key: str) -> str:
        httpx = self._httpx
        try:
            resp = self._client.post(route, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {route} failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise TransportError(f"POST {route} returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError:
            raise TransportError(f"POST {route} returned a non-JSON body") from None
        value = payload.get(key) if isinstance(payload, dict) else None
        if not isinstance(value, str) or not value.strip():
            raise TransportError(f"POST {route} response lacks a non-empty {key!r} string")
        return value

    def summarize(self, text: str, topic: str, prompt: str) -> str:
        return self._post("/v1/summarize", {"text": text, "topic": topic, "prompt": prompt}, "summary")

    def caption(self, blob: bytes, pixels: np.ndarray, digest: str, topic: str, prompt: str) -> str:
        body = {"image_b64": base64.b64encode(blob).decode("ascii"), "prompt": prompt, "topic": topic}
        return self._post("/v1/caption", body, "caption")

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------- cache


class ContextCache:
    """Content-hash keyed results, persisted as one JSON object.

    Reads are lock-free lookups; writes and flushes take a lock.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._dirty = False
        if self.path and self.path.exists():
            try:
                self._entries = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise DataError(f"cannot read context cache {self.path}: {exc}") from exc

    @staticmethod
    def key(kind: ContextKind, backend: str, topic: str, prompt: str, payload_digest: str) -> str:
        material = json.dumps([kind.value, backend, topic, prompt, payload_digest], ensure_ascii=False)
        return hashlib.sha256(material.encode("utf-8")).hexdigest()

    def get(self, key: str) -> ContextResult | None:
        hit = self._entries.get(key)
        return None if hit is None else ContextResult(hit["output"], hit["backend"], cache_hit=True)

    def put(self, key: str, result: ContextResult) -> None:
        with self._lock:
            self._entries[key] = {"output": result.output, "backend": result.backend}
            self._dirty = True

    def __len__(self) -> int:
        return len(self._entries)

    def flush(self) -> None:
        if self.path is None:
            return
        with self._lock:
            if not self._dirty and self.path.exists():
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".cache-")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self._entries, fh, sort_keys=True, ensure_ascii=False)
            os.replace(tmp, self.path)
            self._dirty = False


# --------------------------------------------------------------------------- client


class ContextClient:
    """Backend + cache + invocation counters.

    ``stats["summarize"]`` and ``stats["caption"]`` count every request made
    through the client, cached or not; ``stats["backend_calls"]`` counts the
    ones that reached a backend.
    """

    def __init__(
        self,
        backend="stub",
        cache: ContextCache | None = None,
        *,
        summary_sentences: int = 2,
        summarize_prompt: str = DEFAULT_SUMMARIZE_PROMPT,
        fallback_to_stub: bool = False,
        base_url: str = "http://127.0.0.1:8080",
        timeout: float = 30.0,
        transport=None,
    ):
        self.stub = StubBackend(summary_sentences)
        if backend == "stub":
            self.backend = self.stub
        elif backend == "external":
            self.backend = HttpBackend(base_url, timeout, transport)
        elif hasattr(backend, "summarize") and hasattr(backend, "caption"):
            self.backend = backend
        else:
            raise ContractError(f"unknown context backend {backend!r}")
        self.cache = cache if cache is not None else ContextCache()
        self.summarize_prompt = summarize_prompt
        self.fallback_to_stub = fallback_to_stub
        self.stats: Counter[str] = Counter()

    @classmethod
    def from_config(cls, cfg, transport=None) -> ContextClient:
        return cls(
            cfg.backend,
            ContextCache(cfg.cache or None),
            summary_sentences=cfg.summary_sentences,
            summarize_prompt=cfg.summarize_prompt,
            fallback_to_stub=cfg.fallback_to_stub,
            base_url=cfg.backend_url,
            timeout=cfg.backend_timeout,
            transport=transport,
        )

    def _run(self, kind: ContextKind, topic: str, prompt: str, digest: str, call) -> ContextResult:
        backend = self.backend
        key = ContextCache.key(kind, getattr(backend, "cache_tag", backend.name), topic, prompt, digest)
        hit = self.cache.get(key)
        if hit is not None:
            self.stats["cache_hits"] += 1
            return hit
        self.stats["backend_calls"] += 1
        try:
            result = ContextResult(call(backend), backend.name)
        except TransportError:
            if not self.fallback_to_stub or backend is self.stub:
                raise
            log.warning("external context backend failed; falling back to the stub")
            key = ContextCache.key(kind, self.stub.cache_tag, topic, prompt, digest)
            result = self.cache.get(key) or ContextResult(call(self.stub), self.stub.name)
        self.cache.put(key, result)
        return replace(result, cache_hit=False)

    def summarize(self, source_text: str, topic: str) -> ContextResult:
        self.stats["summarize"] += 1
        prompt = self.summarize_prompt.format(topic=topic)
        req = ContextRequest(ContextKind.SUMMARIZE, topic, prompt, text=source_text.strip() or None)
        digest = hashlib.sha256(req.text.encode("utf-8")).hexdigest()
        return self._run(req.kind, topic, prompt, digest, lambda b: b.summarize(req.text, topic, prompt))

    def caption(self, image_ref, topic: str, prompt: str = DEFAULT_CAPTION_PROMPT) -> ContextResult:
        """Caption an image given as a file path or an :class:`ImageTensor`."""
        self.stats["caption"] += 1
        if isinstance(image_ref, ImageTensor):
            name, pixels = image_ref.source_id, image_ref.pixels
            blob = encode_rawimg(pixels)
        else:
            name = str(image_ref)
            blob = read_image_bytes(image_ref)
            pixels = decode_image(blob, name)
        ContextRequest(ContextKind.CAPTION, topic, prompt, image_ref=name)
        digest = hashlib.sha256(blob).hexdigest()
        return self._run(
            ContextKind.CAPTION, topic, prompt, digest, lambda b: b.caption(blob, pixels, digest, topic, prompt)
        )

    def flush(self) -> None:
        self.cache.flush()


def summarize(source_text: str, topic: str, client: ContextClient) -> ContextResult:
    return client.summarize(source_text, topic)


def caption(image_ref, topic: str, client: ContextClient, prompt: str = DEFAULT_CAPTION_PROMPT) -> ContextResult:
    return client.caption(image_ref, topic, prompt)
