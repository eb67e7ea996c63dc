"""Node feature construction behind a pluggable text-embedding backend.

Every backend returns L2-normalized vectors of a fixed dimension.  The
feature-hash backend is fully deterministic and needs no network; the
HTTP backend posts to a generic embedding endpoint.
"""
from __future__ import annotations

import zlib
from typing import Protocol

import numpy as np

from .errors import EmbeddingUnavailable
from .pool import AgentPool

DEFAULT_DIM = 384


class EmbeddingBackend(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        # empty-text vector: a fixed unit basis vector keeps the contract total
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return v / norm


class HashingBackend:
    """Feature hashing of lowercase character 3-grams into 64 bins.

    Trigrams are taken per word with boundary markers, hashed with crc32
    (stable across processes), counted, L2-normalized, and zero-padded to
    the configured dimension.
    """

    def __init__(self, dim: int = DEFAULT_DIM, bins: int = 64):
        if bins > dim:
            raise ValueError("bins must not exceed dim")
        self.dim = dim
        self.bins = bins
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._memo.get(text)
        if cached is not None:
            return cached
        counts = np.zeros(self.bins)
        for word in text.lower().split():
            padded = f"#{word}#"
            for k in range(len(padded) - 2):
                gram = padded[k : k + 3]
                counts[zlib.crc32(gram.encode()) % self.bins] += 1.0
        v = np.zeros(self.dim)
        v[: self.bins] = counts
        v = _normalize(v)
        v.flags.writeable = False
        self._memo[text] = v
        return v


class HttpBackend:
    """POST {"input": text} to an embedding endpoint, expect {"embedding": [...]}."""

    def __init__(self, endpoint: str, api_key: str = "", dim: int = DEFAULT_DIM, session=None):
        import requests

        self.endpoint = endpoint
        self.api_key = api_key
        self.dim = dim
        self._session = session or requests.Session()

    def embed(self, text: str) -> np.ndarray:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session.post(
                self.endpoint, json={"input": text}, headers=headers, timeout=60
            )
            resp.raise_for_status()
            values = np.array(resp.json()["embedding"], dtype=float)
        except Exception as exc:  # network / schema failures are one error to callers
            raise EmbeddingUnavailable(str(exc)) from exc
        if values.shape != (self.dim,):
            raise EmbeddingUnavailable(
                f"endpoint returned {values.shape}, expected ({self.dim},)"
            )
        return _normalize(values)


def embed_text(backend: EmbeddingBackend, text: str) -> np.ndarray:
    """Embed one string; output always has unit L2 norm."""
    return _normalize(np.asarray(backend.embed(text), dtype=float))


def build_node_features(pool: AgentPool, query: str, backend: EmbeddingBackend) -> np.ndarray:
    """(n_max + 1) x d matrix: one row per agent, query row last."""
    rows = [embed_text(backend, f"{a.role} {a.expertise}") for a in pool.agents]
    rows.append(embed_text(backend, query))
    return np.vstack(rows)
