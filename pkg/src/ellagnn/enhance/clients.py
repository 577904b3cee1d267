"""Chat-completion and embedding service clients, plus deterministic offline mocks."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import random
import re
import threading
import time

import httpx
import numpy as np

from ..text import tokenize

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 2048

ENV_LLM_ENDPOINT = "ELLAGNN_LLM_ENDPOINT"
ENV_LLM_API_KEY = "ELLAGNN_LLM_API_KEY"
ENV_EMBED_ENDPOINT = "ELLAGNN_EMBED_ENDPOINT"


class LLMError(RuntimeError):
    """Transport failure, non-2xx status or unusable completion."""

    def __init__(self, msg, status=None):
        super().__init__(msg)
        self.status = status


class EmbeddingError(RuntimeError):
    pass


class _CallCounter:
    """Process-wide tally of completion requests, whatever the client."""

    def __init__(self):
        self._lock = threading.Lock()
        self._n = 0

    def bump(self):
        with self._lock:
            self._n += 1

    @property
    def value(self) -> int:
        with self._lock:
            return self._n


LLM_CALLS = _CallCounter()


def encode_body(body) -> bytes:
    """Compact UTF-8 JSON so the request bytes do not depend on the HTTP library."""
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


class ChatClient:
    """Minimal chat-completion client: ``POST {endpoint}/v1/chat/completions``.

    Retries 429 and 5xx responses ``max_retries`` times with exponential
    backoff; anything else non-2xx is raised immediately.
    """

    def __init__(self, endpoint, api_key=None, model="vicuna-7b-v1.5", timeout=120.0,
                 max_retries=2, backoff=1.0, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> ChatClient:
        endpoint = os.environ.get(ENV_LLM_ENDPOINT)
        api_key = os.environ.get(ENV_LLM_API_KEY)
        if not endpoint or not api_key:
            raise LLMError(f"set {ENV_LLM_ENDPOINT} and {ENV_LLM_API_KEY} (or use the mock LLM)")
        return cls(endpoint, api_key, **kwargs)

    def request_body(self, messages, temperature=DEFAULT_TEMPERATURE, max_tokens=DEFAULT_MAX_TOKENS) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }

    def complete(self, messages, temperature=DEFAULT_TEMPERATURE, max_tokens=DEFAULT_MAX_TOKENS) -> str:
        body = self.request_body(messages, temperature, max_tokens)
        url = f"{self.endpoint}/v1/chat/completions"
        for attempt in itertools.count():
            LLM_CALLS.bump()
            try:
                resp = self._http.post(url, content=encode_body(body))
            except httpx.HTTPError as exc:
                raise LLMError(f"transport error: {exc}") from exc
            retryable = resp.status_code == 429 or resp.status_code >= 500
            if retryable and attempt < self.max_retries:
                time.sleep(self.backoff * 2 ** attempt)
                continue
            if not resp.is_success:
                raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise LLMError(f"malformed completion response: {exc}") from exc

    def close(self):
        self._http.close()


class MockLLM:
    """Offline stand-in: echoes the node text and appends a digest-derived sentence.

    The echoed text is whatever sits between ``[ Start of X ]`` / ``[ End of X ]``
    markers in the user message (the whole message when there are none).
    ``fail_rate`` injects ``LLMError`` at random, seeded by ``seed``.
    """

    _SECTION = re.compile(r"\[[^\]]*Start of [^\]]*\]\n(.*?)\n\[[^\]]*End of [^\]]*\]", re.S)
    _VOCAB = (
        "context", "method", "approach", "result", "analysis", "model", "evidence", "study",
        "framework", "concept", "insight", "summary", "detail", "finding", "theory", "technique",
    )

    def __init__(self, fail_rate=0.0, seed=0, latency=0.0):
        self.fail_rate = fail_rate
        self.latency = latency
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.calls = 0
        self.failures = 0

    def complete(self, messages, temperature=DEFAULT_TEMPERATURE, max_tokens=DEFAULT_MAX_TOKENS) -> str:
        LLM_CALLS.bump()
        with self._lock:
            self.calls += 1
            fail = self.fail_rate > 0 and self._rng.random() < self.fail_rate
            if fail:
                self.failures += 1
        if self.latency:
            time.sleep(self.latency)
        if fail:
            raise LLMError("injected mock failure", status=503)
        user = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        sections = [s.strip() for s in self._SECTION.findall(user)]
        echoed = " ".join(s for s in sections if s) if sections else user
        digest = hashlib.sha256(user.encode("utf-8")).digest()
        words = [self._VOCAB[b % len(self._VOCAB)] for b in digest[:4]]
        sentence = "Additional " + " ".join(words) + "."
        return f"{echoed} {sentence}".strip()


def call_llm(client, messages, params=None) -> str:
    params = dict(params or {})
    temperature = params.get("temperature", DEFAULT_TEMPERATURE)
    max_tokens = params.get("max_tokens", DEFAULT_MAX_TOKENS)
    text = client.complete(messages, temperature=temperature, max_tokens=max_tokens)
    if not isinstance(text, str) or not text.strip():
        raise LLMError("empty completion")
    return text


class EmbeddingClient:
    """``POST {endpoint}/v1/embeddings`` in batches of ``batch_size`` texts."""

    def __init__(self, endpoint, model="all-MiniLM-L6-v2", batch_size=64, timeout=60.0, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.batch_size = batch_size
        self._http = httpx.Client(timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> EmbeddingClient:
        endpoint = os.environ.get(ENV_EMBED_ENDPOINT)
        if not endpoint:
            raise EmbeddingError(f"set {ENV_EMBED_ENDPOINT} (or use the mock embedder)")
        return cls(endpoint, **kwargs)

    def embed(self, texts) -> np.ndarray:
        texts = list(texts)
        out = []
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start:start + self.batch_size]
            try:
                resp = self._http.post(f"{self.endpoint}/v1/embeddings",
                                       content=encode_body({"model": self.model, "input": chunk}),
                                       headers={"Content-Type": "application/json"})
            except httpx.HTTPError as exc:
                raise EmbeddingError(f"transport error: {exc}") from exc
            if not resp.is_success:
                raise EmbeddingError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()["data"]
                out.extend(d["embedding"] for d in data)
            except (ValueError, KeyError, TypeError) as exc:
                raise EmbeddingError(f"malformed embedding response: {exc}") from exc
            if len(data) != len(chunk):
                raise EmbeddingError(f"asked for {len(chunk)} embeddings, got {len(data)}")
        return np.asarray(out, dtype=np.float64).reshape(len(texts), -1)

    def close(self):
        self._http.close()


class HashingEmbedder:
    """Bag of hashed tokens projected to ``dim`` with signed buckets.

    Shared tokens drive cosine similarity, which is all the tests need from a
    sentence encoder. Empty text maps to a fixed placeholder token.
    """

    def __init__(self, dim=256):
        self.dim = dim

    def _bucket(self, token):
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, 1.0 if (v >> 63) & 1 else -1.0

    def embed(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            toks = tokenize(text) or ["<empty>"]
            for tok in toks:
                j, sign = self._bucket(tok)
                out[i, j] += sign
            if not out[i].any():
                # colliding tokens cancelled out exactly
                j, sign = self._bucket("<cancelled>")
                out[i, j] = sign
        return out


def _unit(v):
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0:
        raise EmbeddingError("embedding service returned a zero or non-finite vector")
    return v / norm


def embed_text(embedder, text: str) -> np.ndarray:
    if not text:
        raise EmbeddingError("cannot embed empty text")
    try:
        vec = np.asarray(embedder.embed([text]), dtype=np.float64)[0]
    except EmbeddingError:
        raise
    except Exception as exc:  # noqa: BLE001 - any service failure becomes an EmbeddingError
        raise EmbeddingError(str(exc)) from exc
    return _unit(vec)


def embed_texts(embedder, texts, batch_size=256) -> np.ndarray:
    """Unit-norm embeddings for a whole corpus; empty texts are legal here."""
    rows = []
    texts = list(texts)
    for start in range(0, len(texts), batch_size):
        chunk = [t if t else "<empty>" for t in texts[start:start + batch_size]]
        rows.append(np.asarray(embedder.embed(chunk), dtype=np.float64))
    mat = np.concatenate(rows) if rows else np.zeros((0, 0))
    return np.vstack([_unit(r) for r in mat]) if len(mat) else mat
