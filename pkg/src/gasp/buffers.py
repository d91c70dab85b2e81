"""Global proposal buffers with embedding-based novelty rejection.

Each accepted proposal is stored with two embeddings: one of its statement
and one of its code. A candidate is rejected when its cosine similarity to
any stored entry, on either channel, exceeds the threshold (strictly).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.95
EMPTY_SIMILARITY = -1.0


class ConfigurationError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# embedders


class Embedder(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


_TOKEN = re.compile(r"[a-z_]+|\d+|[^\sa-z_\d]")


class HashingEmbedder:
    """Token n-gram counts hashed into a fixed number of buckets.

    Deterministic across processes and machines (blake2b, not ``hash``).
    Vectors are nonnegative, so cosine similarities land in [0, 1].
    """

    def __init__(self, dim: int = 256, ngrams: tuple[int, ...] = (1, 2)):
        if dim < 1:
            raise ConfigurationError("embedding dimension must be positive")
        self.dim = dim
        self.ngrams = ngrams

    def _bucket(self, feature: str) -> int:
        digest = hashlib.blake2b(feature.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed_one(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.lower())
        vec = np.zeros(self.dim)
        for n in self.ngrams:
            for j in range(len(tokens) - n + 1):
                vec[self._bucket(" ".join(tokens[j : j + n]))] += 1.0
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts]) if texts else np.zeros((0, self.dim))


class HttpEmbedder:
    """Client for a remote embedding service.

    ``POST {url}/embed {"texts": [...]}`` -> ``{"embeddings": [[float, ...], ...]}``
    """

    def __init__(self, url: str, dim: int, *, client: httpx.Client | None = None, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self._client = client or httpx.Client()

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        resp = self._client.post(f"{self.url}/embed", json={"texts": list(texts)}, timeout=self.timeout)
        resp.raise_for_status()
        out = np.asarray(resp.json()["embeddings"], dtype=float)
        if out.shape != (len(texts), self.dim):
            raise ConfigurationError(f"embedding service returned shape {out.shape}, expected ({len(texts)}, {self.dim})")
        return out


# ---------------------------------------------------------------------------
# similarity


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ConfigurationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return mat / norms


@dataclass(frozen=True)
class BufferEntry:
    proposal_id: str
    statement_embedding: np.ndarray
    code_embedding: np.ndarray
    global_step: int = 0

    def __post_init__(self) -> None:
        for name in ("statement_embedding", "code_embedding"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite vector")
            object.__setattr__(self, name, arr)
        if self.statement_embedding.shape != self.code_embedding.shape:
            raise ConfigurationError("statement and code embeddings differ in dimension")

    @property
    def dim(self) -> int:
        return self.statement_embedding.shape[0]

    def to_record(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "global_step": self.global_step,
            "statement_embedding": self.statement_embedding.tolist(),
            "code_embedding": self.code_embedding.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BufferEntry":
        return cls(rec["proposal_id"], rec["statement_embedding"], rec["code_embedding"], rec.get("global_step", 0))


@dataclass(frozen=True)
class NoveltyVerdict:
    accepted: bool
    max_similarity: float
    offending_id: str | None = None
    nearest_id: str | None = None
    channel: str | None = None


class GlobalBuffer:
    """Append-only store of accepted proposals for one stage."""

    def __init__(self, name: str, entries: Iterable[BufferEntry] = ()):
        self.name = name
        self._entries: list[BufferEntry] = []
        self._ids: set[str] = set()
        self._lock = threading.Lock()
        self._cache: tuple[np.ndarray, np.ndarray] | None = None
        for e in entries:
            self._append(e)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(list(self._entries))

    @property
    def entries(self) -> list[BufferEntry]:
        return list(self._entries)

    @property
    def ids(self) -> list[str]:
        return [e.proposal_id for e in self._entries]

    def _append(self, entry: BufferEntry) -> None:
        if entry.proposal_id in self._ids:
            raise IntegrityError(f"{self.name}: proposal {entry.proposal_id!r} already stored")
        if self._entries and entry.dim != self._entries[0].dim:
            raise ConfigurationError(f"{self.name}: embedding dim {entry.dim} != {self._entries[0].dim}")
        self._entries.append(entry)
        self._ids.add(entry.proposal_id)
        self._cache = None

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-normalized (statement, code) embedding matrices."""
        if self._cache is None:
            if self._entries:
                stm = _unit_rows(np.stack([e.statement_embedding for e in self._entries]))
                code = _unit_rows(np.stack([e.code_embedding for e in self._entries]))
            else:
                stm = code = np.zeros((0, 0))
            self._cache = (stm, code)
        return self._cache

    def snapshot(self) -> "GlobalBuffer":
        return GlobalBuffer(self.name, self._entries)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self._entries:
                fh.write(json.dumps(e.to_record()) + "\n")

    @classmethod
    def read_jsonl(cls, name: str, path: str | Path) -> "GlobalBuffer":
        with open(path) as fh:
            return cls(name, (BufferEntry.from_record(json.loads(l)) for l in fh if l.strip()))


def novelty_check(
    candidate: BufferEntry,
    buffers: Sequence[GlobalBuffer | Sequence[BufferEntry]],
    threshold: float = DEFAULT_THRESHOLD,
) -> NoveltyVerdict:
    """Reject ``candidate`` if it is too close to anything in ``buffers``.

    Similarity is the max over every stored entry and over both channels
    (statement vs statement, code vs code). Rejection needs the max to
    *exceed* ``threshold``; empty buffers report ``-1``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(f"threshold {threshold} must lie in (0, 1]")
    best, best_id, best_channel = EMPTY_SIMILARITY, None, None
    cand = {
        "statement": candidate.statement_embedding / _nonzero_norm(candidate.statement_embedding),
        "code": candidate.code_embedding / _nonzero_norm(candidate.code_embedding),
    }
    for buf in buffers:
        if not isinstance(buf, GlobalBuffer):
            buf = GlobalBuffer("batch", buf)
        if not len(buf):
            continue
        if buf.entries[0].dim != candidate.dim:
            raise ConfigurationError(
                f"candidate dim {candidate.dim} != {buf.name} dim {buf.entries[0].dim}"
            )
        ids = buf.ids
        for channel, mat in zip(("statement", "code"), buf.matrices()):
            sims = mat @ cand[channel]
            j = int(np.argmax(sims))
            if sims[j] > best:
                best, best_id, best_channel = float(min(sims[j], 1.0)), ids[j], channel
    accepted = best <= threshold
    return NoveltyVerdict(accepted, best, None if accepted else best_id, best_id, best_channel)


def _nonzero_norm(v: np.ndarray) -> float:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return n


def buffer_dissimilarity(
    batch: Sequence[BufferEntry], buffer: Sequence[BufferEntry] | GlobalBuffer
) -> float | None:
    """Mean of ``1 - cos`` between every batch item and every buffer item.

    Uses the statement channel. Returns ``None`` (and logs) when either side
    is empty, e.g. on the first iteration.
    """
    entries = buffer.entries if isinstance(buffer, GlobalBuffer) else list(buffer)
    if not batch or not entries:
        log.debug("buffer dissimilarity undefined: batch=%d buffer=%d", len(batch), len(entries))
        return None
    b = _unit_rows(np.stack([e.statement_embedding for e in batch]))
    m = _unit_rows(np.stack([e.statement_embedding for e in entries]))
    return float(np.mean(1.0 - b @ m.T))


def append_accepted(buffer: GlobalBuffer, entries: Iterable[BufferEntry], global_step: int | None = None) -> GlobalBuffer:
    """Append a batch of accepted entries, stamping ``global_step`` if given.

    Ids are checked before anything is written, so a bad batch leaves the
    buffer untouched.
    """
    batch = [e if global_step is None else BufferEntry(e.proposal_id, e.statement_embedding, e.code_embedding, global_step) for e in entries]
    with buffer._lock:
        seen = set(buffer._ids)
        for e in batch:
            if e.proposal_id in seen:
                raise IntegrityError(f"{buffer.name}: proposal {e.proposal_id!r} already stored")
            seen.add(e.proposal_id)
        for e in batch:
            buffer._append(e)
    return buffer


def max_pairwise_similarity(buffer: GlobalBuffer) -> float:
    """Largest off-diagonal similarity over both channels (``-1`` if < 2 entries)."""
    if len(buffer) < 2:
        return EMPTY_SIMILARITY
    best = EMPTY_SIMILARITY
    for mat in buffer.matrices():
        sims = mat @ mat.T
        np.fill_diagonal(sims, -np.inf)
        best = max(best, float(sims.max()))
    return best
