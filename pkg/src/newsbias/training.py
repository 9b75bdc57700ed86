"""Training loop: decoupled-weight-decay Adam, one-cycle LR schedule,
mixture negative log-likelihood.

The run is a pure function of (manifest, corpus, encoder, configs): article
order per epoch is derived from the seed, batches group articles of equal
length so batched and per-article results coincide, and parameter updates
are strictly sequential.
"""

from __future__ import annotations

import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import torch

from .corpus import Article, SplitManifest
from .encoder import EmbeddingCache, EncodedArticle, embed_articles
from .errors import ConfigError, TrainingDiverged
from .model import (
    HierarchicalAttentionClassifier,
    ModelConfig,
    init_parameters,
)

LOSS_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    weight_decay: float = 1e-5
    max_lr: float = 5e-5
    warmup_fraction: float = 0.1
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "adamw"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_lr <= 0:
            raise ConfigError("max_lr must be > 0")
        if self.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def mixture_nll(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Negative log of the mixture probability of the true class."""
    picked = probs.gather(1, labels.view(-1, 1)).squeeze(1)
    return -(picked + LOSS_EPS).log().mean()


def one_cycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp to max_lr over the warmup fraction, cosine decay to zero."""
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be > 0, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps})")
    warmup = cfg.warmup_fraction * total_steps
    if step <= warmup:
        return cfg.max_lr * step / warmup
    frac = (step - warmup) / (total_steps - warmup)
    return cfg.max_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def batches_by_length(
    ids: Sequence[str],
    encoded: dict[str, EncodedArticle],
    batch_size: int,
) -> list[list[str]]:
    """Chunk ids into batches of equal sentence count, preserving id order
    within each length group."""
    groups: dict[int, list[str]] = defaultdict(list)
    for i in ids:
        groups[encoded[i].n_sentences].append(i)
    batches = []
    for n in sorted(groups):
        group = groups[n]
        batches.extend(group[i : i + batch_size] for i in range(0, len(group), batch_size))
    return batches


def _stack_batch(
    ids: Sequence[str], encoded: dict[str, EncodedArticle], dtype: torch.dtype
) -> tuple[torch.Tensor, torch.Tensor]:
    emb = torch.stack(
        [torch.as_tensor(encoded[i].embeddings, dtype=dtype) for i in ids]
    )
    labels = torch.tensor([int(encoded[i].label) for i in ids], dtype=torch.long)
    return emb, labels


@dataclass
class TrainResult:
    model: HierarchicalAttentionClassifier
    history: list[dict]
    best_state: dict | None = None


def train(
    manifest: SplitManifest,
    articles: Sequence[Article],
    encoder_name: str,
    model_config: ModelConfig,
    train_config: TrainConfig,
    cache: EmbeddingCache | None = None,
    corpus_id: str | None = None,
    log_path: str | Path | None = None,
    track_best: bool = False,
    jobs: int = 1,
) -> TrainResult:
    by_id = {a.id: a for a in articles}
    train_ids = manifest.splits.get("train", [])
    valid_ids = manifest.splits.get("valid", [])
    if not train_ids:
        raise ConfigError("manifest has an empty train split")
    missing = [i for i in train_ids + valid_ids if i not in by_id]
    if missing:
        raise ConfigError(
            f"{len(missing)} manifest ids missing from corpus (first: {missing[0]!r})"
        )

    needed = [by_id[i] for i in sorted(set(train_ids) | set(valid_ids))]
    encoded = embed_articles(
        needed, encoder_name, model_config.max_sentences,
        cache=cache, corpus_id=corpus_id, jobs=jobs,
    )

    torch.manual_seed(train_config.seed)
    model = HierarchicalAttentionClassifier(model_config)
    init_parameters(model, seed=train_config.seed)
    optim = torch.optim.AdamW(
        model.parameters(), lr=0.0, weight_decay=train_config.weight_decay
    )

    lengths = defaultdict(int)
    for i in train_ids:
        lengths[encoded[i].n_sentences] += 1
    steps_per_epoch = sum(
        math.ceil(count / train_config.batch_size) for count in lengths.values()
    )
    total_steps = steps_per_epoch * train_config.epochs

    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    history: list[dict] = []
    best_auroc = -1.0
    best_state: dict | None = None
    step = 0
    try:
        for epoch in range(train_config.epochs):
            model.train()
            order = sorted(train_ids)
            random.Random(f"{train_config.seed}:{epoch}").shuffle(order)
            loss_sum = 0.0
            lr = 0.0
            for batch_ids in batches_by_length(order, encoded, train_config.batch_size):
                lr = one_cycle_lr(step, total_steps, train_config)
                for group in optim.param_groups:
                    group["lr"] = lr
                emb, labels = _stack_batch(batch_ids, encoded, model.dtype())
                loss = mixture_nll(model.forward_batch(emb)["probs"], labels)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step} (epoch {epoch}, "
                        f"lr {lr:.3g}), batch ids {batch_ids}"
                    )
                optim.zero_grad()
                loss.backward()
                optim.step()
                loss_sum += loss.item() * len(batch_ids)
                step += 1

            for name, p in model.named_parameters():
                if not torch.isfinite(p).all():
                    raise TrainingDiverged(
                        f"non-finite values in {name} after epoch {epoch}"
                    )
            row: dict = {
                "epoch": epoch,
                "train_loss": loss_sum / len(train_ids),
                "lr_end": lr,
            }
            if valid_ids:
                from .metrics import auroc_multiclass, macro_f1, predict_probs

                probs, labels_np = predict_probs(
                    model, [encoded[i] for i in sorted(valid_ids)], train_config.batch_size
                )
                row["valid_auroc"] = auroc_multiclass(probs, labels_np)
                row["valid_macro_f1"] = macro_f1(probs.argmax(axis=1), labels_np)
                if track_best and row["valid_auroc"] > best_auroc:
                    best_auroc = row["valid_auroc"]
                    best_state = {
                        k: v.detach().clone() for k, v in model.state_dict().items()
                    }
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    model.eval()
    return TrainResult(model=model, history=history, best_state=best_state)
