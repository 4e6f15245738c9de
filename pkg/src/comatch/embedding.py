"""Deterministic sentence embeddings.

The built-in embedder feature-hashes token n-grams of a sentence plus its
surrounding context window into a fixed-dimension L2-normalized vector. It
is a pure function of (window text, config): identical inputs produce
bitwise-identical vectors on any machine. Precomputed vectors from a real
encoder can be imported instead; downstream math is identical either way.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .model import Document, SentenceRef

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class EmbeddingConfig:
    dimension: int = 256
    context_window: int = 2
    ngram_range: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 8:
            raise ConfigError("embedding dimension must be >= 8")
        if self.context_window < 0:
            raise ConfigError("context window must be non-negative")
        lo, hi = self.ngram_range
        if lo < 1 or lo > hi:
            raise ConfigError("ngram_range must satisfy 1 <= min <= max")

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "context_window": self.context_window,
            "ngram_range": list(self.ngram_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingConfig":
        return cls(
            dimension=d.get("dimension", 256),
            context_window=d.get("context_window", 2),
            ngram_range=tuple(d.get("ngram_range", (1, 3))),
            seed=d.get("seed", 0),
        )


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _hash_bucket(gram: str, seed: int, dimension: int) -> tuple[int, float]:
    """Map an n-gram to a (bucket, sign) pair, salted by the seed."""
    key = struct.pack("<q", seed)
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
    h = int.from_bytes(digest, "little")
    sign = 1.0 if h & 1 == 0 else -1.0
    return (h >> 1) % dimension, sign


def embed_text(text: str, cfg: EmbeddingConfig) -> np.ndarray:
    """Feature-hash the token n-grams of a text into a unit vector.

    Empty or token-free text yields the all-zeros vector; callers decide
    how to treat that degenerate case.
    """
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    tokens = _tokens(text)
    lo, hi = cfg.ngram_range
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            gram = " ".join(tokens[i : i + n])
            bucket, sign = _hash_bucket(gram, cfg.seed, cfg.dimension)
            vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def window_text(doc: Document, index: int, context_window: int) -> str:
    """Concatenate a sentence with its surrounding context, truncated at
    document boundaries."""
    if index < 0 or index >= len(doc.sentences):
        raise IndexError(f"sentence index {index} out of range for document {doc.doc_id}")
    lo = max(0, index - context_window)
    hi = min(len(doc.sentences), index + context_window + 1)
    return " ".join(doc.sentences[i].text for i in range(lo, hi))


def embed_sentence(doc: Document, index: int, cfg: EmbeddingConfig) -> np.ndarray:
    """Embed one sentence in its document context."""
    return embed_text(window_text(doc, index, cfg.context_window), cfg)


def embed_corpus(docs: list[Document], cfg: EmbeddingConfig) -> dict[SentenceRef, np.ndarray]:
    """One vector per sentence, keyed by (doc_id, index)."""
    out: dict[SentenceRef, np.ndarray] = {}
    for doc in docs:
        for i in range(len(doc.sentences)):
            out[SentenceRef(doc.doc_id, i)] = embed_sentence(doc, i, cfg)
    return out


def import_embeddings(path, expected_dimension: int) -> dict[SentenceRef, np.ndarray]:
    """Load precomputed vectors from a JSON Lines file.

    Each line is {"doc_id": str, "index": int, "vector": [float, ...]}.
    Dimension mismatches and duplicate sentence refs are format errors
    naming the offending line.
    """
    out: dict[SentenceRef, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                ref = SentenceRef(obj["doc_id"], obj["index"])
                vector = np.asarray(obj["vector"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: malformed embedding row") from exc
            if vector.ndim != 1 or vector.size != expected_dimension:
                raise FormatError(
                    f"{path}: line {lineno}: vector has dimension {vector.size}, expected {expected_dimension}"
                )
            if ref in out:
                raise FormatError(f"{path}: line {lineno}: duplicate sentence ref {ref}")
            out[ref] = vector
    return out


def export_embeddings(embeddings: dict[SentenceRef, np.ndarray], path) -> None:
    """Write vectors in the import format, ordered by sentence ref."""
    with open(path, "w", encoding="utf-8") as fh:
        for ref in sorted(embeddings):
            row = {"doc_id": ref.doc_id, "index": ref.index, "vector": [float(x) for x in embeddings[ref]]}
            fh.write(json.dumps(row) + "\n")
