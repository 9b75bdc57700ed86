"""Sentence embeddings: frozen external encoders behind an adapter, plus a
deterministic token-hash encoder used everywhere in tests.

Encoders are context-free (one sentence in, one vector out) and never
expose a gradient path; the model treats embeddings as constants.  An
on-disk cache (one binary matrix + JSON row index per corpus) makes
training independent of whichever encoder produced the vectors.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Article, Label
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CACHE_ENV_VAR = "NEWSBIAS_CACHE_DIR"


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    dim: int
    frozen: bool = True

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ConfigError(f"encoder dim must be > 0, got {self.dim}")
        if not self.frozen:
            raise ConfigError("encoders are always frozen in this toolkit")


@dataclass
class EncodedArticle:
    article_id: str
    embeddings: np.ndarray  # (n+1, d); row 0 is the headline
    label: Label
    outlet: str

    @property
    def n_sentences(self) -> int:
        return self.embeddings.shape[0] - 1


class SentenceEncoder:
    """Adapter contract: a batch of strings in, a float32 matrix out."""

    def __init__(self, name: str, dim: int, version: str,
                 fn: Callable[[Sequence[str]], np.ndarray]):
        self.spec = EncoderSpec(name=name, dim=dim)
        self.version = version
        self._fn = fn

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def dim(self) -> int:
        return self.spec.dim

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.asarray(self._fn(texts), dtype=np.float32)
        if out.shape != (len(texts), self.dim):
            raise ConfigError(
                f"encoder {self.name!r} returned shape {out.shape}, "
                f"expected {(len(texts), self.dim)}"
            )
        if not np.isfinite(out).all():
            raise DataError(f"encoder {self.name!r} produced non-finite values")
        return out


# ---------------------------------------------------------------------------
# Deterministic token-hash encoder
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9']+")


@functools.lru_cache(maxsize=262144)
def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, salt=seed.to_bytes(8, "little")
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    vec = rng.standard_normal(dim)
    vec.flags.writeable = False
    return vec


def deterministic_test_encoder(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm sum of per-token hash vectors.

    Shared tokens pull vectors together, so near-identical token multisets
    have high cosine similarity while disjoint ones are near-orthogonal for
    dim >= 64.  Tokens are summed in sorted order so the result depends only
    on the token multiset, bit for bit.
    """
    if dim < 2:
        raise ConfigError(f"test encoder dim must be >= 2, got {dim}")
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise DataError(f"cannot encode text with no tokens: {text!r}")
    acc = np.zeros(dim, dtype=np.float64)
    for tok in sorted(tokens):
        acc += _token_vector(tok, dim, seed)
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:  # astronomically unlikely, but stay total
        acc[0] = 1.0
        norm = 1.0
    return (acc / norm).astype(np.float32)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, SentenceEncoder] = {}
_HASH_NAME = re.compile(r"^hash(\d+)$")


def register_encoder(encoder: SentenceEncoder) -> None:
    _REGISTRY[encoder.name] = encoder


def get_encoder(name: str) -> SentenceEncoder:
    """Resolve a registered encoder; ``hash<dim>`` names are built in."""
    if name in _REGISTRY:
        return _REGISTRY[name]
    m = _HASH_NAME.match(name)
    if m:
        dim = int(m.group(1))
        enc = SentenceEncoder(
            name=name,
            dim=dim,
            version="1",
            fn=lambda texts, d=dim: np.stack(
                [deterministic_test_encoder(t, d) for t in texts]
            ),
        )
        register_encoder(enc)
        return enc
    raise ConfigError(
        f"encoder {name!r} is not registered; register an adapter or use the "
        f"built-in hash<dim> family (e.g. hash64)"
    )


def encode_article(article: Article, encoder: SentenceEncoder) -> EncodedArticle:
    """Embed headline (row 0) and body sentences (rows 1..n)."""
    texts = [article.headline] + list(article.sentences)
    for idx, t in enumerate(texts):
        if not t.strip():
            raise DataError(f"article {article.id!r}: sentence {idx} is empty")
    matrix = encoder.encode_batch(texts)
    return EncodedArticle(
        article_id=article.id,
        embeddings=matrix,
        label=article.label,
        outlet=article.outlet,
    )


# ---------------------------------------------------------------------------
# Embedding cache
# ---------------------------------------------------------------------------

class EmbeddingCache:
    """Per-(encoder, corpus) binary matrix with a JSON row index.

    Layout: ``<root>/<encoder>/<corpus_id>.bin`` holds float32 rows in C
    order; ``<corpus_id>.idx.json`` maps article id to (row offset, rows).
    Hits are bit-exact.  Writes replace the whole pair atomically enough for
    the single-writer contract; readers never see a partial index because
    the index is written last.
    """

    def __init__(self, root: str | Path | None = None):
        root = root or os.environ.get(CACHE_ENV_VAR) or ".newsbias-cache"
        self.root = Path(root)

    def _paths(self, encoder_name: str, corpus_id: str) -> tuple[Path, Path]:
        base = self.root / encoder_name
        return base / f"{corpus_id}.bin", base / f"{corpus_id}.idx.json"

    def has(self, encoder_name: str, corpus_id: str) -> bool:
        bin_path, idx_path = self._paths(encoder_name, corpus_id)
        return bin_path.exists() and idx_path.exists()

    def index(self, encoder_name: str, corpus_id: str) -> dict | None:
        """Parsed index metadata (dim, version, rows) or None on miss."""
        _, idx_path = self._paths(encoder_name, corpus_id)
        if not idx_path.exists():
            return None
        return json.loads(idx_path.read_text(encoding="utf-8"))

    def store(
        self,
        encoder_name: str,
        corpus_id: str,
        matrices: dict[str, np.ndarray],
        dim: int,
        version: str,
    ) -> None:
        bin_path, idx_path = self._paths(encoder_name, corpus_id)
        bin_path.parent.mkdir(parents=True, exist_ok=True)
        rows: dict[str, list[int]] = {}
        offset = 0
        with bin_path.open("wb") as fh:
            for article_id in sorted(matrices):
                m = np.ascontiguousarray(matrices[article_id], dtype=np.float32)
                if m.ndim != 2 or m.shape[1] != dim:
                    raise ConfigError(
                        f"cache store: matrix for {article_id!r} has shape "
                        f"{m.shape}, expected (*, {dim})"
                    )
                fh.write(m.tobytes())
                rows[article_id] = [offset, m.shape[0]]
                offset += m.shape[0]
        index = {
            "encoder": encoder_name,
            "version": version,
            "dim": dim,
            "dtype": "float32",
            "rows": rows,
        }
        idx_path.write_text(json.dumps(index, sort_keys=True), encoding="utf-8")

    def load(self, encoder_name: str, corpus_id: str) -> dict[str, np.ndarray]:
        bin_path, idx_path = self._paths(encoder_name, corpus_id)
        if not self.has(encoder_name, corpus_id):
            raise DataError(
                f"no embedding cache for encoder {encoder_name!r}, corpus "
                f"{corpus_id!r} under {self.root}"
            )
        index = json.loads(idx_path.read_text(encoding="utf-8"))
        dim = index["dim"]
        data = np.fromfile(bin_path, dtype=np.float32).reshape(-1, dim)
        return {
            article_id: data[offset : offset + nrows]
            for article_id, (offset, nrows) in index["rows"].items()
        }


def corpus_fingerprint(path: str | Path) -> str:
    """Content hash used as the cache key for a corpus file."""
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"{Path(path).stem}-{digest[:12]}"


def encoder_metadata(
    name: str,
    cache: EmbeddingCache | None = None,
    corpus_id: str | None = None,
) -> tuple[str, str, int]:
    """(name, version, dim), from the registry or from a filled cache.

    External encoders never registered in this process are usable as long as
    their embeddings are cached; the cache index carries dim and version.
    """
    try:
        enc = get_encoder(name)
        return enc.name, enc.version, enc.dim
    except ConfigError:
        pass
    if cache is not None and corpus_id is not None:
        index = cache.index(name, corpus_id)
        if index is not None:
            return name, str(index.get("version", "?")), int(index["dim"])
    raise ConfigError(
        f"encoder {name!r} is not registered and no embedding cache was found; "
        f"fill the cache or register an adapter"
    )


def embed_articles(
    articles: Sequence[Article],
    encoder_name: str,
    max_sentences: int,
    cache: EmbeddingCache | None = None,
    corpus_id: str | None = None,
    jobs: int = 1,
) -> dict[str, EncodedArticle]:
    """Embed a corpus, going through the cache when one is configured.

    Articles longer than ``max_sentences - 1`` body sentences are truncated
    here, with a warning, so the model itself can refuse oversized inputs.
    If the encoder is unregistered and the cache has no entry, the error
    tells the user which side to fix.
    """
    clipped: list[Article] = []
    n_truncated = 0
    for a in articles:
        if len(a.sentences) + 1 > max_sentences:
            n_truncated += 1
            a = Article(a.id, a.headline, a.sentences[: max_sentences - 1],
                        a.outlet, a.label, a.word_count)
        clipped.append(a)
    if n_truncated:
        log.warning(
            "truncated %d article(s) to %d sentences (incl. headline)",
            n_truncated, max_sentences,
        )

    cached: dict[str, np.ndarray] = {}
    if cache is not None and corpus_id is not None and cache.has(encoder_name, corpus_id):
        cached = cache.load(encoder_name, corpus_id)

    missing = [a for a in clipped if _cache_miss(a, cached, max_sentences)]
    fresh: dict[str, np.ndarray] = {}
    if missing:
        try:
            enc = get_encoder(encoder_name)
        except ConfigError:
            raise ConfigError(
                f"encoder {encoder_name!r} is not registered and the embedding "
                f"cache is missing {len(missing)} article(s) (first: "
                f"{missing[0].id!r}); fill the cache or register an adapter"
            ) from None
        fresh = _encode_many(missing, enc, jobs)
        if cache is not None and corpus_id is not None:
            merged = dict(cached)
            merged.update(fresh)
            cache.store(encoder_name, corpus_id, merged, enc.dim, enc.version)

    out: dict[str, EncodedArticle] = {}
    for a in clipped:
        rows = 1 + len(a.sentences)
        matrix = fresh.get(a.id)
        if matrix is None:
            matrix = cached[a.id][:rows]
        out[a.id] = EncodedArticle(a.id, matrix, a.label, a.outlet)
    return out


def _cache_miss(article: Article, cached: dict[str, np.ndarray], max_sentences: int) -> bool:
    m = cached.get(article.id)
    return m is None or m.shape[0] < 1 + len(article.sentences)


def _encode_chunk(args: tuple) -> list[tuple[str, np.ndarray]]:
    encoder_name, payload = args
    enc = get_encoder(encoder_name)
    return [
        (article_id, enc.encode_batch(texts)) for article_id, texts in payload
    ]


def _encode_many(
    articles: Sequence[Article], enc: SentenceEncoder, jobs: int
) -> dict[str, np.ndarray]:
    payload = [(a.id, [a.headline] + list(a.sentences)) for a in articles]
    for article_id, texts in payload:
        for idx, t in enumerate(texts):
            if not t.strip():
                raise DataError(f"article {article_id!r}: sentence {idx} is empty")
    if jobs <= 1 or len(payload) < 2 * jobs:
        return {aid: enc.encode_batch(texts) for aid, texts in payload}
    # Only the built-in hash encoders are picklable by name; adapters run
    # in-process regardless of the jobs flag.
    if not _HASH_NAME.match(enc.name):
        return {aid: enc.encode_batch(texts) for aid, texts in payload}
    from concurrent.futures import ProcessPoolExecutor

    chunks = [(enc.name, payload[i::jobs]) for i in range(jobs)]
    out: dict[str, np.ndarray] = {}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for result in pool.map(_encode_chunk, chunks):
            out.update(result)
    return out
