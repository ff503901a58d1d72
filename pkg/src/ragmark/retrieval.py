"""Embedding and top-k similarity retrieval over a knowledge base.

Retrieval is a brute-force linear scan (desk scale, no ANN index). All three
similarity kinds are normalized so that larger is always more similar:
euclidean distance enters as its negation.
"""

from __future__ import annotations

import weakref
import zlib

import numpy as np

from .errors import EmptyKnowledgeBaseError, ValidationError
from .kb import KnowledgeBase

METRICS = ("cosine", "inner_product", "euclidean")

DEFAULT_DIM = 256

# Scores are quantized before ordering so that mathematically equal scores
# tie (and fall through to the id tie-break) regardless of float summation
# order; distinct similarities differ by far more than this at desk scale.
SCORE_DECIMALS = 9


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Deterministic offline embedding: character trigrams hashed into `dim`
    buckets, then L2-normalized. Texts sharing trigrams score higher cosine."""
    if dim < 8:
        raise ValidationError(f"embedding dim must be >= 8, got {dim}")
    if len(text) < 3:
        grams = [text]
    else:
        grams = [text[i : i + 3] for i in range(len(text) - 2)]
    vec = np.zeros(dim, dtype=np.float64)
    for g in grams:
        vec[zlib.crc32(g.encode("utf-8")) % dim] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


class HashEmbedder:
    """Trigram-hash embedder with a per-text cache (texts repeat heavily
    during injection)."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 8:
            raise ValidationError(f"embedding dim must be >= 8, got {dim}")
        self._dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = hash_embed(text, self._dim)
            self._cache[text] = vec
        return vec


def _score_matrix(matrix: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        row_norms = np.linalg.norm(matrix, axis=1)
        row_norms[row_norms == 0.0] = 1.0
        qn = float(np.linalg.norm(query))
        q = query / qn if qn > 0.0 else query
        return (matrix @ q) / row_norms
    if metric == "inner_product":
        return matrix @ query
    if metric == "euclidean":
        return -np.linalg.norm(matrix - query, axis=1)
    raise ValidationError(f"unknown similarity metric {metric!r}")


def _ranked(ids: list[str], scores: np.ndarray, k: int) -> list[tuple[str, float]]:
    order = np.lexsort((np.asarray(ids), -np.round(scores, SCORE_DECIMALS)))
    return [(ids[i], float(scores[i])) for i in order[: min(k, len(ids))]]


def top_k(
    kb: KnowledgeBase,
    embedder,
    metric: str,
    query: str,
    k: int,
) -> list[tuple[str, float]]:
    """Return the min(k, |kb|) most similar records as (id, score), scores
    descending, ties broken by ascending record id."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if metric not in METRICS:
        raise ValidationError(f"unknown similarity metric {metric!r}")
    if len(kb) == 0:
        raise EmptyKnowledgeBaseError("cannot retrieve from an empty base")
    ids = kb.ids()
    matrix = np.stack([embedder.embed(r.text) for r in kb])
    return _ranked(ids, _score_matrix(matrix, embedder.embed(query), metric), k)


class Retriever:
    """Top-k retrieval bound to one embedder and metric.

    Caches the stacked embedding matrix per (base, version) so repeated
    queries during the injection loop do not re-embed unchanged records.
    """

    def __init__(self, embedder, metric: str = "cosine"):
        if metric not in METRICS:
            raise ValidationError(f"unknown similarity metric {metric!r}")
        self.embedder = embedder
        self.metric = metric
        self._cache: "weakref.WeakKeyDictionary[KnowledgeBase, tuple]" = (
            weakref.WeakKeyDictionary()
        )

    def _matrix(self, kb: KnowledgeBase) -> tuple[list[str], np.ndarray]:
        cached = self._cache.get(kb)
        if cached is not None and cached[0] == kb.version:
            return cached[1], cached[2]
        ids = kb.ids()
        matrix = np.stack([self.embedder.embed(r.text) for r in kb])
        self._cache[kb] = (kb.version, ids, matrix)
        return ids, matrix

    def top_k(self, kb: KnowledgeBase, query: str, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        if len(kb) == 0:
            raise EmptyKnowledgeBaseError("cannot retrieve from an empty base")
        ids, matrix = self._matrix(kb)
        return _ranked(ids, _score_matrix(matrix, self.embedder.embed(query), self.metric), k)
