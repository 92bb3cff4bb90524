"""Per-publication document embeddings via a pluggable provider.

The built-in fallback hashes unigram+bigram TF-IDF features into a fixed
number of signed buckets, so the whole pipeline runs offline and produces
the same vector for the same text on any platform. Any transformer
embedding service can be plugged in over the HTTP protocol instead.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable
from .ingest import Dataset
from .text import tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingMatrix:
    dim: int
    vectors: dict[str, np.ndarray]
    provider_tag: str
    warnings: tuple[str, ...] = ()

    def ids(self) -> list[str]:
        return sorted(self.vectors)

    def as_array(self, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        """Stack vectors into an (n, dim) array in the given (or sorted) id order."""
        order = list(ids) if ids is not None else self.ids()
        return np.stack([self.vectors[i] for i in order]) if order else np.empty((0, self.dim))


class EmbeddingProvider(Protocol):
    tag: str

    def fit(self, texts: Sequence[str]) -> None: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _stable_bucket(token: str, dim: int) -> tuple[int, float]:
    """Deterministic (bucket, sign) for a token; independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    index = value % dim
    sign = 1.0 if (value >> 63) & 1 else -1.0
    return index, sign


class HashedTfidfProvider:
    """Feature-hashed TF-IDF embeddings, L2-normalized, fixed dimension.

    IDF statistics come from the corpus passed to fit(); embeddings are a
    pure function of (corpus, text). Unfitted use falls back to IDF = 1.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.tag = f"hashed-tfidf-{dim}"
        self._idf: dict[str, float] = {}
        self._bucket_cache: dict[str, tuple[int, float]] = {}

    def fit(self, texts: Sequence[str]) -> None:
        df: dict[str, int] = {}
        for text in texts:
            for token in set(tokenize(text)):
                df[token] = df.get(token, 0) + 1
        n_docs = len(texts)
        self._idf = {
            token: math.log((1 + n_docs) / (1 + count)) + 1.0
            for token, count in df.items()
        }

    def idf_stats(self) -> dict[str, float]:
        """Fitted IDF table (for provenance recording)."""
        return dict(self._idf)

    def _bucket(self, token: str) -> tuple[int, float]:
        cached = self._bucket_cache.get(token)
        if cached is None:
            cached = _stable_bucket(token, self.dim)
            self._bucket_cache[token] = cached
        return cached

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            counts: dict[str, int] = {}
            for token in tokenize(text):
                counts[token] = counts.get(token, 0) + 1
            for token, count in counts.items():
                index, sign = self._bucket(token)
                out[row, index] += sign * count * self._idf.get(token, 1.0)
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class HttpEmbeddingProvider:
    """Client for an external embedding service (e.g. a SPECTER server).

    Protocol: POST {endpoint} with {"texts": [...]} returning
    {"vectors": [[...], ...]}, one vector per input text.
    """

    def __init__(self, endpoint: str, batch_size: int = 32, timeout: float = 60.0):
        self.endpoint = endpoint
        self.batch_size = batch_size
        self.timeout = timeout
        self.tag = f"http:{endpoint}"

    def fit(self, texts: Sequence[str]) -> None:
        pass  # external models carry their own statistics

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            try:
                response = httpx.post(
                    self.endpoint, json={"texts": batch}, timeout=self.timeout
                )
            except httpx.HTTPError as err:
                raise ProviderUnavailable(f"embedding endpoint unreachable: {err}") from err
            if response.status_code != 200:
                raise ProviderUnavailable(
                    f"embedding endpoint returned {response.status_code}"
                )
            vectors = response.json().get("vectors", [])
            if len(vectors) != len(batch):
                raise DimensionMismatch(
                    f"expected {len(batch)} vectors, got {len(vectors)}"
                )
            rows.extend(vectors)
        lengths = {len(v) for v in rows}
        if len(lengths) > 1:
            raise DimensionMismatch(f"inconsistent vector lengths: {sorted(lengths)}")
        return np.asarray(rows, dtype=np.float64)


def embed_corpus(dataset: Dataset, provider: EmbeddingProvider) -> EmbeddingMatrix:
    """One vector per publication from 'title + abstract + keywords' text."""
    ids = dataset.publication_ids()
    texts = [dataset.publications[i].text() for i in ids]
    provider.fit(texts)
    array = provider.embed(texts)
    if not np.all(np.isfinite(array)):
        raise DimensionMismatch("provider returned non-finite values")

    warnings = []
    vectors = {}
    for pid, row in zip(ids, array):
        if not np.any(row):
            warnings.append(f"publication {pid} has empty text; zero vector")
            logger.warning("publication %s embedded as zero vector (empty text)", pid)
        vectors[pid] = row
    dim = array.shape[1] if len(ids) else getattr(provider, "dim", 0)
    return EmbeddingMatrix(
        dim=dim, vectors=vectors, provider_tag=provider.tag, warnings=tuple(warnings)
    )


def embed_terms(terms: Iterable[str], provider: EmbeddingProvider) -> dict[str, np.ndarray]:
    """One vector per distinct term, in the same space as corpus vectors."""
    distinct = sorted(set(terms))
    if not distinct:
        return {}
    array = provider.embed(distinct)
    return {term: row for term, row in zip(distinct, array)}


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors have similarity 0 with everything."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
