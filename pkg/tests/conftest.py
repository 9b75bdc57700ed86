import json
from dataclasses import dataclass
from pathlib import Path

import pytest
import torch

from helpers import make_split, make_synth_corpus, write_corpus_jsonl
from newsbias.model import ModelConfig, save_checkpoint
from newsbias.training import TrainConfig, train

torch.set_num_threads(1)


@pytest.fixture(scope="session", autouse=True)
def isolated_cache_dir(tmp_path_factory):
    """Keep the default embedding cache out of the working tree."""
    mp = pytest.MonkeyPatch()
    mp.setenv("NEWSBIAS_CACHE_DIR", str(tmp_path_factory.mktemp("embedding-cache")))
    yield
    mp.undo()


@pytest.fixture(scope="session")
def synth_articles():
    return make_synth_corpus()


@pytest.fixture(scope="session")
def synth_manifest(synth_articles):
    return make_split(synth_articles)


@dataclass
class TrainedRun:
    articles: list
    manifest: object
    model_config: ModelConfig
    train_config: TrainConfig
    result: object
    corpus_path: Path
    manifest_path: Path
    checkpoint_path: Path


@pytest.fixture(scope="session")
def trained(synth_articles, synth_manifest, tmp_path_factory) -> TrainedRun:
    """One full paper-schedule training run on the synthetic corpus, shared
    by everything that needs a working checkpoint."""
    model_config = ModelConfig(d_s=64, d_h=32, lstm_layers=2, num_heads=4,
                               max_sentences=16)
    train_config = TrainConfig(epochs=25, batch_size=8, seed=1)
    result = train(synth_manifest, synth_articles, "hash64", model_config, train_config)

    root = tmp_path_factory.mktemp("trained")
    corpus_path = write_corpus_jsonl(synth_articles, root / "corpus.jsonl")
    manifest_path = root / "manifest.json"
    synth_manifest.save(manifest_path)
    checkpoint_path = root / "checkpoint.nbck"
    save_checkpoint(
        checkpoint_path, result.model,
        seed=train_config.seed, epoch=train_config.epochs - 1,
        encoder_name="hash64", encoder_version="1", encoder_dim=64,
        model_tag="hier-attn", train_size=len(synth_manifest.splits["train"]),
        train_config=train_config.to_dict(),
    )
    return TrainedRun(
        articles=synth_articles, manifest=synth_manifest,
        model_config=model_config, train_config=train_config, result=result,
        corpus_path=corpus_path, manifest_path=manifest_path,
        checkpoint_path=checkpoint_path,
    )


@pytest.fixture(scope="session")
def stats_reference():
    path = Path(__file__).parent / "fixtures" / "stats_reference.json"
    return json.loads(path.read_text(encoding="utf-8"))
