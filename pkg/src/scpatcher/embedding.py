"""Embedding providers and the exact nearest-neighbor index.

The reference provider is a deterministic hashing embedder: tokens are
hashed into a fixed number of buckets, counts are log-damped, and the
vector is L2-normalized. A remote HTTP provider can slot in behind the
same interface. Retrieval is an exact linear scan ranked by Euclidean
distance, so results are reproducible and oracle-checkable.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import requests

from .ingest import lex
from .model import FunctionUnit, SignatureFeatures

DEFAULT_DIMENSION = 256
DEFAULT_POOL_SIZE = 50

EMBED_URL_VAR = "SCPATCHER_EMBED_URL"
EMBED_KEY_VAR = "SCPATCHER_EMBED_KEY"


class ProviderError(Exception):
    """Remote embedding provider failure.

    ``code`` is one of ``RemoteUnavailable`` or ``DimensionMismatch``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class DimensionMismatchError(Exception):
    """Vectors of different dimensions were combined."""


class EmptyIndexError(Exception):
    """Retrieval attempted against an index with no entries."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding vector must be non-empty")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def semantic_distance(q: EmbeddingVector, d: EmbeddingVector) -> float:
    """Euclidean distance between query and document vectors."""
    if q.dimension != d.dimension:
        raise DimensionMismatchError(
            f"dimension {q.dimension} vs {d.dimension}")
    return math.dist(q.values, d.values)


class HashingEmbedder:
    """Deterministic local embedder: token buckets, log counts, unit norm."""

    name = "token-hash"

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def embed(self, code_text: str) -> EmbeddingVector:
        counts = [0] * self.dimension
        for tok in lex(code_text):
            if tok.kind in ("number", "string"):
                text = "LIT"  # literal values carry no structure
            else:
                text = tok.text
            counts[self._bucket(text)] += 1
        weights = [math.log1p(c) for c in counts]
        norm = math.sqrt(sum(w * w for w in weights))
        if norm == 0.0:
            basis = [0.0] * self.dimension
            basis[0] = 1.0
            return EmbeddingVector(tuple(basis))
        return EmbeddingVector(tuple(w / norm for w in weights))


class RemoteEmbedder:
    """HTTP adapter: POST {model, input} to a vector endpoint.

    The endpoint must answer {"vectors": [[...], ...]}, one vector per
    input text, each of the configured dimension.
    """

    name = "remote"

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None,
                 model: str = "default", dimension: int = DEFAULT_DIMENSION,
                 timeout: float = 30.0, session: Optional[requests.Session] = None):
        self.url = url or os.environ.get(EMBED_URL_VAR, "")
        self.api_key = api_key if api_key is not None else os.environ.get(EMBED_KEY_VAR)
        self.model = model
        self.dimension = dimension
        self.timeout = timeout
        self._session = session or requests.Session()
        if not self.url:
            raise ProviderError("RemoteUnavailable",
                                f"no endpoint configured (set {EMBED_URL_VAR})")

    def embed(self, code_text: str) -> EmbeddingVector:
        return self.embed_batch([code_text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self._session.post(
                self.url, json={"model": self.model, "input": list(texts)},
                headers=headers, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except requests.RequestException as exc:
            raise ProviderError("RemoteUnavailable", f"{self.url}: {exc}") from None
        except ValueError as exc:
            raise ProviderError("RemoteUnavailable",
                                f"{self.url}: non-JSON response ({exc})") from None
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError("RemoteUnavailable",
                                f"{self.url}: malformed vector payload")
        out = []
        for values in vectors:
            if len(values) != self.dimension:
                raise ProviderError(
                    "DimensionMismatch",
                    f"provider returned dimension {len(values)}, expected {self.dimension}")
            out.append(EmbeddingVector(tuple(float(v) for v in values)))
        return out


def embed(code_text: str, provider) -> EmbeddingVector:
    """Embed one code snippet with the given provider."""
    return provider.embed(code_text)


def provider_from_meta(meta: Optional[dict]):
    """Reconstruct the embedding provider recorded in KB metadata."""
    meta = meta or {}
    name = meta.get("name", HashingEmbedder.name)
    dimension = int(meta.get("dimension", DEFAULT_DIMENSION))
    if name == HashingEmbedder.name:
        return HashingEmbedder(dimension)
    if name == RemoteEmbedder.name:
        return RemoteEmbedder(dimension=dimension)
    raise ProviderError("RemoteUnavailable", f"unknown embedder {name!r} in KB metadata")


@dataclass(frozen=True)
class Candidate:
    """One retrieved reference function plus its ranking fields."""

    function_id: str
    s_sem: float
    guf: int
    clone_id: Optional[str]
    signature: SignatureFeatures
    s_final: Optional[float] = None


@dataclass
class VectorIndex:
    """Immutable exact-search index over function vectors."""

    dimension: int
    entries: list[tuple[str, EmbeddingVector, FunctionUnit]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def build_index(functions: Sequence[FunctionUnit],
                vectors: dict[str, tuple[float, ...]]) -> VectorIndex:
    """Pair every function with its vector; all dimensions must agree."""
    entries = []
    dimension = 0
    for fn in sorted(functions, key=lambda f: f.id):
        if fn.id not in vectors:
            continue
        vector = EmbeddingVector(tuple(vectors[fn.id]))
        if dimension == 0:
            dimension = vector.dimension
        elif vector.dimension != dimension:
            raise DimensionMismatchError(
                f"{fn.qualified_name}: dimension {vector.dimension}, index has {dimension}")
        entries.append((fn.id, vector, fn))
    return VectorIndex(dimension=dimension, entries=entries)


def index_from_graph(graph) -> VectorIndex:
    """Build the index straight from a loaded knowledge base."""
    return build_index(graph.functions(), graph.vectors)


def knn(index: VectorIndex, query: EmbeddingVector, n: int = DEFAULT_POOL_SIZE
        ) -> list[Candidate]:
    """Exact nearest neighbors, ascending distance, id tiebreak."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not index.entries:
        raise EmptyIndexError("vector index has no entries")
    scored = []
    for function_id, vector, fn in index.entries:
        distance = semantic_distance(query, vector)
        scored.append((distance, function_id, fn))
    scored.sort(key=lambda item: (item[0], item[1]))
    out = []
    for distance, function_id, fn in scored[:n]:
        out.append(Candidate(
            function_id=function_id,
            s_sem=distance,
            guf=max(fn.guf, 1),
            clone_id=fn.clone_id,
            signature=fn.signature,
        ))
    return out
