"""Shared builders for synthetic corpora, plus the independent oracles the
implementation is checked against."""

from __future__ import annotations

import itertools
import json
import math
import random
from pathlib import Path

import numpy as np

from newsbias.corpus import Article, Label, SplitConfig, build_augmented_split

CLASSES = ("left", "center", "right")
FILLER = ("the", "a", "on", "said", "with", "as", "after", "before", "from", "into")


def make_synth_corpus(
    n_per_outlet: int = 50,
    outlets_per_class: int = 2,
    seed: int = 11,
    class_token_rate: float = 0.6,
    sentences: tuple[int, int] = (3, 7),
    tokens_per_sentence: tuple[int, int] = (5, 8),
) -> list[Article]:
    """Single-label outlets whose articles draw tokens from a class-specific
    vocabulary; the class is recoverable from token sets alone."""
    rng = random.Random(seed)
    suffixes = "abcdefghijklmnopqrstuvwxyz"
    articles = []
    for ci, cls in enumerate(CLASSES):
        vocab = [f"{cls}tok{j}" for j in range(12)]

        def sentence() -> str:
            return " ".join(
                rng.choice(vocab) if rng.random() < class_token_rate else rng.choice(FILLER)
                for _ in range(rng.randint(*tokens_per_sentence))
            )

        for oi in range(outlets_per_class):
            outlet = f"out-{cls}-{suffixes[oi]}"
            for j in range(n_per_outlet):
                articles.append(
                    Article(
                        id=f"{outlet}-{j:03d}",
                        headline=sentence(),
                        sentences=[sentence() for _ in range(rng.randint(*sentences))],
                        outlet=outlet,
                        label=Label(ci),
                    )
                )
    return articles


def small_split_config(**overrides) -> SplitConfig:
    """Split sized for the two-outlets-per-class synthetic corpus."""
    fields = dict(
        train_per_class=50,
        test1_outlets_per_class=1,
        test1_per_outlet=10,
        test2_outlets_per_class=0,
        valid_outlets_per_class=0,
    )
    fields.update(overrides)
    return SplitConfig(**fields)


def make_split(articles, seed=5, **overrides):
    return build_augmented_split(articles, small_split_config(**overrides), seed)


def write_corpus_jsonl(articles, path: Path, body_as_text: bool = False) -> Path:
    with Path(path).open("w", encoding="utf-8") as fh:
        for a in articles:
            row = {
                "id": a.id,
                "headline": a.headline,
                "outlet": a.outlet,
                "label": a.label.class_name,
            }
            if body_as_text:
                row["body"] = " ".join(s if s.endswith(".") else s + "." for s in a.sentences)
            else:
                row["sentences"] = a.sentences
            fh.write(json.dumps(row) + "\n")
    return Path(path)


def make_mixed_outlet_corpus(rng: random.Random, n_outlets: int, per_outlet: int) -> list[Article]:
    """Outlets that may publish several classes; exercises the general
    eligibility rules of the split builder."""
    articles = []
    for o in range(n_outlets):
        outlet = f"mix-{o:02d}"
        for j in range(per_outlet):
            cls = rng.randrange(3)
            tok = f"{CLASSES[cls]}tok{rng.randrange(8)}"
            articles.append(
                Article(
                    id=f"{outlet}-{j:03d}",
                    headline=f"{tok} headline",
                    sentences=[f"{tok} body {k}" for k in range(rng.randint(1, 4))],
                    outlet=outlet,
                    label=Label(cls),
                )
            )
    return articles


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def brute_force_auroc(scores, labels) -> float:
    """Pair-counting oracle: fraction of (positive, negative) pairs ranked
    correctly per class, ties counting half; macro average over the classes
    present in the labels."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    per_class = []
    for c in np.unique(labels):
        pos = scores[labels == c, c]
        neg = scores[labels != c, c]
        wins = 0.0
        for p, n in itertools.product(pos, neg):
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
        per_class.append(wins / (len(pos) * len(neg)))
    return float(np.mean(per_class))


def brute_force_dtw(a, b) -> float:
    """Minimum cost over all monotone alignments, enumerated recursively
    (no DP); only viable for short series."""
    best = math.inf

    def rec(i, j, acc):
        nonlocal best
        acc += abs(a[i] - b[j])
        if acc >= best:
            return
        if i == len(a) - 1 and j == len(b) - 1:
            best = acc
            return
        if i + 1 < len(a):
            rec(i + 1, j, acc)
        if j + 1 < len(b):
            rec(i, j + 1, acc)
        if i + 1 < len(a) and j + 1 < len(b):
            rec(i + 1, j + 1, acc)

    rec(0, 0, 0.0)
    return best


def early_late_salience_families(n_per_family=10, seed=0):
    """Monotone-decay vs monotone-rise salience shapes; DTW separates those
    regardless of warping, unlike a bare peak shift."""
    from newsbias.structure import MainSentenceProfile

    def profile(article_id, salience):
        total = sum(salience)
        n = len(salience)
        return MainSentenceProfile(
            article_id=article_id,
            n_sentences=n,
            salience=[s / total for s in salience],
            main_locations=[(int(np.argmax(salience)) + 1) / n],
            word_count=300,
        )

    rng = np.random.default_rng(seed)
    early, late = [], []
    for i in range(n_per_family):
        length = int(rng.integers(6, 11))
        base = np.exp(-np.arange(length) / rng.uniform(1.0, 2.0))
        base = base + rng.uniform(0.0, 0.02, length)
        early.append(profile(f"early-{i}", base.tolist()))
        length = int(rng.integers(6, 11))
        base = np.exp(-np.arange(length) / rng.uniform(1.0, 2.0))
        base = base + rng.uniform(0.0, 0.02, length)
        late.append(profile(f"late-{i}", base[::-1].tolist()))
    return early, late
