"""Corpus ingestion and outlet-disjoint split construction.

Articles carry a headline, the ordered body sentences, an outlet name and a
three-way bias label.  Splits are built so that no outlet contributes to
more than one of train / test1 / test2 (/ valid), which is what makes the
evaluation measure robustness to outlet writing style rather than outlet
memorization.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field, asdict
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

CLASS_NAMES = ("left", "center", "right")


class Label(IntEnum):
    LEFT = 0
    CENTER = 1
    RIGHT = 2

    @classmethod
    def parse(cls, value: str) -> "Label":
        try:
            return cls(CLASS_NAMES.index(str(value).strip().lower()))
        except ValueError:
            raise DataError(
                f"unknown label {value!r}; expected one of {CLASS_NAMES}"
            ) from None

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.value]


@dataclass
class Article:
    id: str
    headline: str
    sentences: list[str]
    outlet: str
    label: Label
    word_count: int = 0

    def __post_init__(self) -> None:
        if not self.headline.strip():
            raise DataError(f"article {self.id!r}: empty headline")
        if not self.sentences:
            raise DataError(f"article {self.id!r}: no body sentences")
        if any(not s.strip() for s in self.sentences):
            raise DataError(f"article {self.id!r}: blank body sentence")
        if not isinstance(self.label, Label):
            self.label = Label.parse(self.label)
        if self.word_count <= 0:
            self.word_count = len(self.headline.split()) + sum(
                len(s.split()) for s in self.sentences
            )


# ---------------------------------------------------------------------------
# Sentence segmentation
# ---------------------------------------------------------------------------

DEFAULT_ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "rev", "gen", "sen", "rep", "gov",
        "lt", "col", "sgt", "capt", "st", "jr", "sr", "inc", "corp", "co",
        "ltd", "dept", "univ", "assn", "bros", "vs", "etc", "approx",
        "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept",
        "oct", "nov", "dec", "e.g", "i.e", "u.s", "u.k", "u.n", "d.c",
    }
)

_TERMINALS = ".!?"
_CLOSERS = "\"')]”’"


class RuleBasedSegmenter:
    """Deterministic splitter on terminal punctuation.

    A period followed by whitespace ends a sentence unless the preceding
    token is a known abbreviation; the abbreviation set is configurable so
    corpora with unusual conventions stay segmentable without code changes.
    """

    def __init__(self, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS):
        self.abbreviations = frozenset(a.lower().rstrip(".") for a in abbreviations)

    def split(self, text: str) -> list[str]:
        sentences: list[str] = []
        start = 0
        i = 0
        n = len(text)
        while i < n:
            ch = text[i]
            if ch not in _TERMINALS:
                i += 1
                continue
            j = i
            while j + 1 < n and text[j + 1] in _TERMINALS + _CLOSERS:
                j += 1
            boundary = j + 1 >= n or text[j + 1].isspace()
            if boundary and ch == "." and self._preceding_word(text, i) in self.abbreviations:
                boundary = False
            if boundary:
                piece = text[start : j + 1].strip()
                if piece:
                    sentences.append(piece)
                start = j + 1
            i = j + 1
        tail = text[start:].strip()
        if tail:
            sentences.append(tail)
        return sentences

    @staticmethod
    def _preceding_word(text: str, idx: int) -> str:
        m = re.search(r"[\w.'’]+$", text[:idx])
        return m.group(0).lower().rstrip(".") if m else ""


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_articles(
    path: str | Path,
    format: str = "jsonl",
    segmenter: RuleBasedSegmenter | None = None,
) -> list[Article]:
    """Read a JSONL corpus; one article per line.

    Each record needs ``id``, ``headline``, ``outlet``, ``label`` and either
    ``sentences`` (pre-segmented) or ``body`` (segmented here).  Errors are
    reported with the 1-based line number of the offending record.
    """
    if format != "jsonl":
        raise ConfigError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    segmenter = segmenter or RuleBasedSegmenter()

    articles: list[Article] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                articles.append(_article_from_record(record, segmenter))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if articles[-1].id in seen:
                raise DataError(f"{path}:{lineno}: duplicate article id {articles[-1].id!r}")
            seen.add(articles[-1].id)
    return articles


def _article_from_record(record: dict, segmenter: RuleBasedSegmenter) -> Article:
    for key in ("id", "headline", "outlet", "label"):
        if key not in record:
            raise DataError(f"missing field {key!r}")
    if "sentences" in record:
        sentences = [str(s) for s in record["sentences"]]
    elif "body" in record:
        sentences = segmenter.split(str(record["body"]))
        if not sentences:
            raise DataError("body produced no sentences")
    else:
        raise DataError("missing field 'body' or 'sentences'")
    return Article(
        id=str(record["id"]),
        headline=str(record["headline"]),
        sentences=sentences,
        outlet=str(record["outlet"]),
        label=Label.parse(record["label"]),
    )


def save_articles(articles: Iterable[Article], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for a in articles:
            row = {
                "id": a.id,
                "headline": a.headline,
                "sentences": a.sentences,
                "outlet": a.outlet,
                "label": a.label.class_name,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Outlet filtering / merging
# ---------------------------------------------------------------------------

def filter_and_merge_outlets(
    articles: Sequence[Article],
    min_articles: int,
    merge_map: dict[str, str] | None = None,
) -> list[Article]:
    """Rewrite outlet names per ``merge_map``, then drop small outlets.

    Merging runs before thresholding so that a publisher split across
    several feed names is counted once.
    """
    if min_articles < 1:
        raise ConfigError("min_articles must be >= 1")
    merge_map = merge_map or {}
    renamed = [
        Article(a.id, a.headline, a.sentences, merge_map.get(a.outlet, a.outlet),
                a.label, a.word_count)
        for a in articles
    ]
    counts: dict[str, int] = {}
    for a in renamed:
        counts[a.outlet] = counts.get(a.outlet, 0) + 1
    return [a for a in renamed if counts[a.outlet] >= min_articles]


# ---------------------------------------------------------------------------
# Split construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitConfig:
    """Targets for the outlet-disjoint split.

    Defaults reproduce the augmented split counts: 7,300 train articles per
    class, test set 1 = 4 outlets x 50 articles per class, test set 2 =
    4 outlets x 60 articles per class, no validation split unless asked.
    """

    train_per_class: int = 7300
    test1_outlets_per_class: int = 4
    test1_per_outlet: int = 50
    test2_outlets_per_class: int = 4
    test2_per_outlet: int = 60
    valid_outlets_per_class: int = 0
    valid_per_outlet: int = 50

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.train_per_class < 1:
            raise ConfigError("train_per_class must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "SplitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown split config keys: {sorted(unknown)}")
        return cls(**data)


SPLIT_NAMES = ("train", "test1", "test2", "valid")


@dataclass
class SplitManifest:
    config: dict
    seed: int
    splits: dict[str, list[str]]
    outlets: dict[str, str]
    per_class_counts: dict[str, dict[str, int]]
    labels: dict[str, str] = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "seed": self.seed,
            "splits": {k: self.splits.get(k, []) for k in SPLIT_NAMES},
            "outlets": self.outlets,
            "per_class_counts": self.per_class_counts,
        }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, articles: Sequence[Article] | None = None) -> "SplitManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(
            config=data["config"],
            seed=data["seed"],
            splits=data["splits"],
            outlets=data["outlets"],
            per_class_counts=data["per_class_counts"],
        )
        if articles is not None:
            manifest.attach_labels(articles)
        return manifest

    def attach_labels(self, articles: Sequence[Article]) -> None:
        by_id = {a.id: a.label.class_name for a in articles}
        missing = [
            i for ids in self.splits.values() for i in ids if i not in by_id
        ]
        if missing:
            raise DataError(
                f"manifest references {len(missing)} article ids missing from the "
                f"corpus (first: {missing[0]!r})"
            )
        self.labels = {
            i: by_id[i] for ids in self.splits.values() for i in ids
        }

    def check_invariants(self) -> None:
        """Outlet disjointness and per-class balance; raises on violation."""
        outlet_sets = {name: set() for name in ("train", "test1", "test2", "valid")}
        for outlet, split in self.outlets.items():
            outlet_sets.setdefault(split, set()).add(outlet)
        names = [n for n in ("train", "test1", "test2", "valid") if outlet_sets.get(n)]
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                overlap = outlet_sets[a] & outlet_sets[b]
                if overlap:
                    raise ConfigError(
                        f"outlets shared between {a} and {b}: {sorted(overlap)[:3]}"
                    )
        for split, counts in self.per_class_counts.items():
            values = list(counts.values())
            if values and max(values) - min(values) > 1:
                raise ConfigError(f"split {split!r} is class-imbalanced: {counts}")


def build_augmented_split(
    articles: Sequence[Article],
    config: SplitConfig,
    seed: int,
) -> SplitManifest:
    """Draw test (and valid) outlets first, then sample train from what is left.

    Test outlets are a seeded uniform choice among outlets with enough
    articles of the class; train articles are sampled per class from the
    unassigned outlets regardless of outlet.  Everything is a pure function
    of (articles, config, seed).
    """
    rng = random.Random(seed)
    by_outlet_class: dict[str, dict[Label, list[str]]] = {}
    for a in sorted(articles, key=lambda x: x.id):
        by_outlet_class.setdefault(a.outlet, {}).setdefault(a.label, []).append(a.id)

    plan = [
        ("test1", config.test1_outlets_per_class, config.test1_per_outlet),
        ("test2", config.test2_outlets_per_class, config.test2_per_outlet),
        ("valid", config.valid_outlets_per_class, config.valid_per_outlet),
    ]
    assignment: dict[str, str] = {}
    splits: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    counts: dict[str, dict[str, int]] = {name: {} for name in SPLIT_NAMES}
    used_ids: set[str] = set()

    for split_name, n_outlets, per_outlet in plan:
        if n_outlets == 0 or per_outlet == 0:
            continue
        for label in Label:
            eligible = sorted(
                outlet
                for outlet, per_class in by_outlet_class.items()
                if assignment.get(outlet, split_name) == split_name
                and len([i for i in per_class.get(label, []) if i not in used_ids])
                >= per_outlet
            )
            if len(eligible) < n_outlets:
                raise ConfigError(
                    f"cannot pick {n_outlets} outlets with >= {per_outlet} "
                    f"{label.class_name!r} articles for {split_name}: only "
                    f"{len(eligible)} eligible"
                )
            chosen = rng.sample(eligible, n_outlets)
            for outlet in sorted(chosen):
                assignment[outlet] = split_name
                pool = [i for i in by_outlet_class[outlet].get(label, []) if i not in used_ids]
                picked = rng.sample(pool, per_outlet)
                splits[split_name].extend(picked)
                used_ids.update(picked)
            counts[split_name][label.class_name] = (
                counts[split_name].get(label.class_name, 0) + n_outlets * per_outlet
            )

    label_by_id = {a.id: a.label for a in articles}
    outlet_by_id = {a.id: a.outlet for a in articles}
    reserved = set(assignment)  # outlets claimed by test/valid splits
    for label in Label:
        pool = sorted(
            a.id
            for a in articles
            if a.label == label and a.outlet not in reserved and a.id not in used_ids
        )
        if len(pool) < config.train_per_class:
            raise ConfigError(
                f"need {config.train_per_class} train articles for class "
                f"{label.class_name!r} but only {len(pool)} remain outside the "
                f"test/valid outlets"
            )
        picked = rng.sample(pool, config.train_per_class)
        splits["train"].extend(picked)
        used_ids.update(picked)
        counts["train"][label.class_name] = config.train_per_class
        for i in picked:
            assignment.setdefault(outlet_by_id[i], "train")

    for name in SPLIT_NAMES:
        splits[name] = sorted(splits[name])

    manifest = SplitManifest(
        config=asdict(config),
        seed=seed,
        splits=splits,
        outlets=dict(sorted(assignment.items())),
        per_class_counts={k: dict(sorted(v.items())) for k, v in counts.items() if v},
        labels={i: label_by_id[i].class_name for ids in splits.values() for i in ids},
    )
    manifest.check_invariants()
    return manifest


def subsample_train(manifest: SplitManifest, size: int, seed: int) -> SplitManifest:
    """Class-balanced train subset: size // 3 per class, remainder spread
    over classes in label order so counts never differ by more than one."""
    if size < 3:
        raise ConfigError(f"subsample size must be >= 3, got {size}")
    if not manifest.labels:
        raise ConfigError("manifest has no label info; load it with the corpus")
    train_ids = manifest.splits.get("train", [])
    if size > len(train_ids):
        raise ConfigError(
            f"subsample size {size} exceeds train size {len(train_ids)}"
        )
    per_class = {name: size // 3 for name in CLASS_NAMES}
    for i in range(size % 3):
        per_class[CLASS_NAMES[i]] += 1

    rng = random.Random(seed)
    new_train: list[str] = []
    for name in CLASS_NAMES:
        pool = sorted(i for i in train_ids if manifest.labels[i] == name)
        if len(pool) < per_class[name]:
            raise ConfigError(
                f"train split has only {len(pool)} {name!r} articles; "
                f"need {per_class[name]}"
            )
        new_train.extend(rng.sample(pool, per_class[name]))

    splits = {k: list(v) for k, v in manifest.splits.items()}
    splits["train"] = sorted(new_train)
    counts = {k: dict(v) for k, v in manifest.per_class_counts.items()}
    counts["train"] = dict(per_class)
    config = dict(manifest.config)
    config["train_subsample"] = {"size": size, "seed": seed}
    kept = {i for ids in splits.values() for i in ids}
    return SplitManifest(
        config=config,
        seed=manifest.seed,
        splits=splits,
        outlets=manifest.outlets,
        per_class_counts=counts,
        labels={i: manifest.labels[i] for i in kept},
    )
