"""Post-hoc discourse-structure analysis.

From each article's forward trace we read off where the model localizes the
main sentences; articles are then clustered by the shape of that salience
series under dynamic time warping, which compares position profiles without
tying them to a common document length.  "K-Means with DTW" is realized as
k-medoids: DTW has no well-defined mean, and medoids keep the procedure
exact and deterministic.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Article
from .errors import ConfigError, DataError
from .model import ForwardTrace

DEFAULT_MIN_WORDS = 200
DEFAULT_MAX_WORDS = 1000


@dataclass
class MainSentenceProfile:
    article_id: str
    n_sentences: int
    salience: list[float]           # per body position, sums to 1
    main_locations: list[float]     # relative positions i*/n, one per head
    word_count: int
    lexical_bias: int | None = None
    informational_bias: int | None = None

    def to_row(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def build_profile(
    trace: ForwardTrace,
    article: Article,
    dedup_locations: bool = True,
    annotations: dict | None = None,
) -> MainSentenceProfile:
    """Aggregate a trace into a per-position salience series.

    Salience is the mean over heads of the body-sentence scores,
    renormalized; the main locations are each head's argmax mapped to i/n.
    """
    if trace.article_id != article.id:
        raise ConfigError(
            f"trace is for {trace.article_id!r}, article is {article.id!r}"
        )
    body = trace.alpha[:, 1:]
    salience = body.mean(axis=0)
    salience = salience / salience.sum()
    n = trace.n_sentences
    locations = [int(i) / n for i in trace.main_index]
    if dedup_locations:
        locations = sorted(set(locations))
    lex = info = None
    if annotations is not None:
        marks = annotations.get(article.id, {})
        lex = sum(1 for v in marks.values() if v.get("lexical"))
        info = sum(1 for v in marks.values() if v.get("informational"))
    return MainSentenceProfile(
        article_id=article.id,
        n_sentences=n,
        salience=[float(s) for s in salience],
        main_locations=locations,
        word_count=article.word_count,
        lexical_bias=lex,
        informational_bias=info,
    )


def load_annotations(path: str | Path) -> dict:
    """BASIL-style sentence annotations: article id -> {sentence index ->
    {"lexical": bool, "informational": bool}}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise DataError(f"{path}: annotation file must be a JSON object")
    return data


def filter_profiles(
    profiles: Sequence[MainSentenceProfile],
    min_words: int = DEFAULT_MIN_WORDS,
    max_words: int = DEFAULT_MAX_WORDS,
) -> list[MainSentenceProfile]:
    """Word-count bounds applied before clustering (inclusive)."""
    if min_words > max_words:
        raise ConfigError("min_words must be <= max_words")
    return [p for p in profiles if min_words <= p.word_count <= max_words]


# ---------------------------------------------------------------------------
# Dynamic time warping
# ---------------------------------------------------------------------------

def dtw_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Classic DP over match/insert/delete steps with |x - y| local cost and
    no warping window."""
    if len(a) == 0 or len(b) == 0:
        raise DataError("DTW is undefined for empty series")
    n, m = len(a), len(b)
    prev = [math.inf] * m
    prev[0] = abs(a[0] - b[0])
    for j in range(1, m):
        prev[j] = prev[j - 1] + abs(a[0] - b[j])
    for i in range(1, n):
        ai = a[i]
        cur = [math.inf] * m
        cur[0] = prev[0] + abs(ai - b[0])
        for j in range(1, m):
            cur[j] = abs(ai - b[j]) + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return float(prev[-1])


def _dtw_pairs(args: tuple) -> list[tuple[int, int, float]]:
    series, pairs = args
    return [(i, j, dtw_distance(series[i], series[j])) for i, j in pairs]


def dtw_matrix(series: Sequence[Sequence[float]], jobs: int = 1) -> np.ndarray:
    """Symmetric pairwise DTW matrix; the pair set may be computed in
    parallel without affecting the result."""
    n = len(series)
    out = np.zeros((n, n), dtype=np.float64)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if jobs > 1 and len(pairs) > 64:
        from concurrent.futures import ProcessPoolExecutor

        series = [list(map(float, s)) for s in series]
        chunks = [(series, pairs[k::jobs]) for k in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(_dtw_pairs, chunks):
                for i, j, d in result:
                    out[i, j] = out[j, i] = d
    else:
        for i, j in pairs:
            out[i, j] = out[j, i] = dtw_distance(series[i], series[j])
    return out


# ---------------------------------------------------------------------------
# k-medoids (PAM swap heuristic)
# ---------------------------------------------------------------------------

def kmedoids(
    dist: np.ndarray, k: int, seed: int, max_iter: int = 100
) -> tuple[list[int], np.ndarray, list[float]]:
    """Seeded random init, then steepest-descent medoid/non-medoid swaps.

    Returns (medoid indices, assignment array, cost history starting at the
    initial configuration).  Cost never increases across iterations; ties in
    assignment go to the lowest medoid index, so the whole procedure is
    deterministic given the seed.
    """
    n = dist.shape[0]
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds number of points {n}")
    rng = random.Random(seed)
    medoids = sorted(rng.sample(range(n), k))

    def cost_of(meds: list[int]) -> float:
        return float(dist[:, meds].min(axis=1).sum())

    history = [cost_of(medoids)]
    for _ in range(max_iter):
        best_cost, best_meds = history[-1], None
        medoid_set = set(medoids)
        for mi in range(k):
            for h in range(n):
                if h in medoid_set:
                    continue
                candidate = medoids[:mi] + [h] + medoids[mi + 1 :]
                c = cost_of(candidate)
                if c < best_cost - 1e-12:
                    best_cost, best_meds = c, candidate
        if best_meds is None:
            break
        medoids = sorted(best_meds)
        history.append(best_cost)

    assignment = np.argmin(dist[:, medoids], axis=1)
    return medoids, assignment, history


@dataclass
class ClusterReport:
    k: int
    assignments: dict[str, int]
    clusters: list[dict]
    total_cost: float
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def cluster_profiles(
    profiles: Sequence[MainSentenceProfile],
    k: int,
    seed: int,
    max_iter: int = 100,
    jobs: int = 1,
    series: str = "salience",
) -> ClusterReport:
    """Cluster salience series by DTW distance and summarize each cluster.

    ``series`` selects what gets compared: the mean-over-heads salience
    profile (default) or a one-hot encoding of the main-sentence locations
    ("onehot"), since either reading of "distribution of contexts" is
    defensible.  Cluster ids are 1-based, ordered by descending size.
    """
    if not profiles:
        raise ConfigError("no profiles to cluster")
    profiles = sorted(profiles, key=lambda p: p.article_id)
    if series == "salience":
        data = [p.salience for p in profiles]
    elif series == "onehot":
        data = []
        for p in profiles:
            row = [0.0] * p.n_sentences
            for loc in p.main_locations:
                row[min(int(round(loc * p.n_sentences)) - 1, p.n_sentences - 1)] = 1.0
            data.append(row)
    else:
        raise ConfigError(f"unknown series kind {series!r}")

    dist = dtw_matrix(data, jobs=jobs)
    medoids, assignment, cost_history = kmedoids(dist, k, seed, max_iter)
    cost = cost_history[-1]

    order = sorted(
        range(len(medoids)),
        key=lambda m: (-int((assignment == m).sum()), medoids[m]),
    )
    relabel = {old: new + 1 for new, old in enumerate(order)}
    assignments = {
        p.article_id: relabel[int(assignment[idx])] for idx, p in enumerate(profiles)
    }

    clusters = []
    total = len(profiles)
    for new_id, old in enumerate(order, start=1):
        members = [p for idx, p in enumerate(profiles) if assignment[idx] == old]
        entry = {
            "id": new_id,
            "size": len(members),
            "size_pct": 100.0 * len(members) / total,
            "avg_words": float(np.mean([p.word_count for p in members])),
            "medoid": profiles[medoids[old]].article_id,
        }
        lex = [p.lexical_bias for p in members if p.lexical_bias is not None]
        info = [p.informational_bias for p in members if p.informational_bias is not None]
        entry["avg_lexical_bias"] = float(np.mean(lex)) if lex else None
        entry["avg_informational_bias"] = float(np.mean(info)) if info else None
        clusters.append(entry)

    return ClusterReport(
        k=k,
        assignments=assignments,
        clusters=clusters,
        total_cost=cost,
        metadata={
            "algorithm": "k-medoids (PAM swap heuristic)",
            "distance": "dtw, |x-y| local cost, no window",
            "series": series,
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# Location densities
# ---------------------------------------------------------------------------

@dataclass
class LocationDensity:
    cluster: int
    bin_edges: list[float]
    counts: list[int]
    rug: list[float]

    @property
    def mass(self) -> list[float]:
        total = sum(self.counts)
        return [c / total for c in self.counts] if total else [0.0] * len(self.counts)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, count in zip(
                self.bin_edges[:-1], self.bin_edges[1:], self.counts
            ):
                writer.writerow([f"{left:.6f}", f"{right:.6f}", count])

    def write_rug_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position"])
            for pos in self.rug:
                writer.writerow([f"{pos:.6f}"])


def location_density(
    profiles: Sequence[MainSentenceProfile],
    assignments: dict[str, int],
    cluster: int,
    bins: int = 10,
) -> LocationDensity:
    """Histogram over [0, 1] of main-sentence locations in one cluster, with
    the raw positions kept for a rug plot."""
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    members = [p for p in profiles if assignments.get(p.article_id) == cluster]
    if not members:
        raise ConfigError(f"cluster {cluster} has no members")
    positions = [
        loc for p in sorted(members, key=lambda p: p.article_id)
        for loc in p.main_locations
    ]
    counts, edges = np.histogram(positions, bins=bins, range=(0.0, 1.0))
    return LocationDensity(
        cluster=cluster,
        bin_edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        rug=positions,
    )


def main_sentence_export(
    trace: ForwardTrace, article: Article
) -> dict:
    """Concatenated per-head main sentences, deduplicated in document order,
    for external summary-similarity studies."""
    indices = sorted({int(i) for i in trace.main_index})
    sentences = [article.sentences[i - 1] for i in indices]
    return {
        "id": article.id,
        "main_sentence_indices": indices,
        "main_sentences": sentences,
        "text": " ".join(sentences),
    }
