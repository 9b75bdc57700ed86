"""Three-class evaluation: macro one-vs-rest AUROC (rank-based, midrank
ties) and macro F1, plus the per-trial result record that downstream
statistics consume.

The TrialResult JSONL file is the contract with the stats module; results
produced by external baselines can be appended to the same file as long as
they carry the same fields.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Article, SplitManifest
from .encoder import (
    EmbeddingCache,
    EncodedArticle,
    embed_articles,
    encoder_metadata,
)
from .errors import ConfigError, DataError
from .model import Checkpoint, load_checkpoint, model_from_checkpoint


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _binary_auroc(scores: np.ndarray, positives: np.ndarray) -> float:
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    ranks = _midranks(scores)
    pos_rank_sum = ranks[positives].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auroc_multiclass(scores: np.ndarray, labels: Sequence[int]) -> float:
    """Macro one-vs-rest AUROC from per-class scores.

    Classes absent from the labels are skipped with a warning; if fewer than
    two classes are present the metric is undefined and raises.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != len(labels):
        raise ConfigError(
            f"scores must be (m, C) aligned with labels; got {scores.shape} "
            f"vs {len(labels)} labels"
        )
    if len(labels) < 2:
        raise DataError("AUROC needs at least 2 samples")
    present = np.unique(labels)
    if len(present) < 2:
        raise DataError("AUROC needs at least two classes present in labels")
    per_class = []
    for c in range(scores.shape[1]):
        if c not in present:
            warnings.warn(f"class {c} absent from labels; skipped in AUROC")
            continue
        per_class.append(_binary_auroc(scores[:, c], labels == c))
    return float(np.mean(per_class))


def macro_f1(pred: Sequence[int], labels: Sequence[int], num_classes: int = 3) -> float:
    """Unweighted mean of per-class F1; empty classes contribute zero."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(pred) != len(labels) or len(pred) == 0:
        raise ConfigError("pred and labels must be equal-length and non-empty")
    scores = []
    for c in range(num_classes):
        tp = int(((pred == c) & (labels == c)).sum())
        n_pred = int((pred == c).sum())
        n_true = int((labels == c).sum())
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / n_pred
        recall = tp / n_true
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def predict_probs(
    model, encoded: Sequence[EncodedArticle], batch_size: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Class distributions and labels for a list of articles, in a fixed
    order (sorted by article id) so aggregation is deterministic."""
    from .training import batches_by_length, _stack_batch

    encoded = sorted(encoded, key=lambda e: e.article_id)
    by_id = {e.article_id: e for e in encoded}
    ids = [e.article_id for e in encoded]
    probs = np.zeros((len(ids), model.config.num_classes), dtype=np.float64)
    pos = {i: k for k, i in enumerate(ids)}
    model.eval()
    with torch.no_grad():
        for batch_ids in batches_by_length(ids, by_id, batch_size):
            emb, _ = _stack_batch(batch_ids, by_id, model.dtype())
            out = model.forward_batch(emb)["probs"].cpu().numpy()
            for row, i in enumerate(batch_ids):
                probs[pos[i]] = out[row]
    labels = np.array([int(by_id[i].label) for i in ids], dtype=np.int64)
    return probs, labels


# ---------------------------------------------------------------------------
# Trial results
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    model_tag: str
    seed: int
    test_set: str
    train_size: int
    auroc: float
    macro_f1: float
    encoder: str = ""
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.auroc <= 1.0:
            raise ConfigError(f"auroc out of range: {self.auroc}")
        if not 0.0 <= self.macro_f1 <= 1.0:
            raise ConfigError(f"macro_f1 out of range: {self.macro_f1}")

    def to_row(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def append_trial(path: str | Path, result: TrialResult) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(result.to_row() + "\n")


def read_trials(path: str | Path) -> list[TrialResult]:
    results = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                results.append(TrialResult(**data))
            except (json.JSONDecodeError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad trial row ({exc})") from None
    return results


def config_fingerprint(header: dict) -> str:
    payload = json.dumps(
        {"model_config": header.get("model_config"),
         "train_config": header.get("train_config")},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def evaluate(
    checkpoint: Checkpoint | str | Path,
    manifest: SplitManifest,
    split: str,
    articles: Sequence[Article],
    encoder_name: str | None = None,
    cache: EmbeddingCache | None = None,
    corpus_id: str | None = None,
    batch_size: int = 16,
    model_tag: str | None = None,
) -> TrialResult:
    """Forward passes over one split; AUROC from the mixture scores,
    macro F1 from their argmax."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    header = checkpoint.header
    enc_header = header["encoder"]
    encoder_name = encoder_name or enc_header["name"]
    if encoder_name != enc_header["name"]:
        raise ConfigError(
            f"encoder {encoder_name!r} does not match checkpoint encoder "
            f"{enc_header['name']!r}"
        )
    _, _, dim = encoder_metadata(encoder_name, cache, corpus_id)
    if dim != enc_header["dim"]:
        raise ConfigError(
            f"encoder dim {dim} does not match checkpoint dim {enc_header['dim']}"
        )

    ids = manifest.splits.get(split, [])
    if not ids:
        raise ConfigError(f"split {split!r} is empty or missing from the manifest")
    by_id = {a.id: a for a in articles}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError(
            f"{len(missing)} split ids missing from corpus (first: {missing[0]!r})"
        )

    model = model_from_checkpoint(checkpoint)
    encoded = embed_articles(
        [by_id[i] for i in sorted(ids)],
        encoder_name,
        model.config.max_sentences,
        cache=cache,
        corpus_id=corpus_id,
    )
    probs, labels = predict_probs(model, list(encoded.values()), batch_size)
    return TrialResult(
        model_tag=model_tag or header["model_tag"],
        seed=header["seed"],
        test_set=split,
        train_size=header["train_size"],
        auroc=auroc_multiclass(probs, labels),
        macro_f1=macro_f1(probs.argmax(axis=1), labels),
        encoder=f"{enc_header['name']}@{enc_header.get('version', '?')}",
        config_fingerprint=config_fingerprint(header),
    )
