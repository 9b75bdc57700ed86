"""Command-line entry point wiring the modules into one workflow:
prepare-data -> train -> evaluate -> stats, plus the structural analysis.

Every command resolves its configuration as flags > config file > defaults
and writes the resolved values next to its outputs, so a finished run can
be reproduced from its artifacts alone.  Exit codes: 0 on success, 1 for
user/config/data errors, 2 for internal invariant violations.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import stats as stats_mod
from . import structure as structure_mod
from . import training as training_mod
from .encoder import EmbeddingCache, corpus_fingerprint, embed_articles, encoder_metadata
from .errors import InternalError, NewsbiasError
from .model import ModelConfig, load_checkpoint, model_from_checkpoint, save_checkpoint


def tool_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NewsbiasError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (InternalError, AssertionError) as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _write_run_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_corpus(path: str) -> list[corpus_mod.Article]:
    return corpus_mod.load_articles(path)


def _ensure_parent(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _cache(cache_dir: str | None) -> EmbeddingCache | None:
    return EmbeddingCache(cache_dir) if cache_dir else EmbeddingCache()


@click.group()
@click.version_option(package_name="newsbias", prog_name="newsbias")
def main() -> None:
    """Political-bias detection toolkit: data prep, training, evaluation,
    robustness statistics, and discourse-structure analysis."""


# ---------------------------------------------------------------------------
# prepare-data
# ---------------------------------------------------------------------------

@main.command("prepare-data")
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON file with split config fields; flags override it.")
@click.option("--min-articles", default=1, show_default=True, type=int,
              help="Drop outlets with fewer articles (after merging).")
@click.option("--merge-map", "merge_map_path", type=click.Path(), default=None,
              help="JSON map of outlet name -> canonical outlet name.")
@click.option("--train-per-class", type=int, default=None)
@click.option("--test1-outlets", type=int, default=None)
@click.option("--test1-per-outlet", type=int, default=None)
@click.option("--test2-outlets", type=int, default=None)
@click.option("--test2-per-outlet", type=int, default=None)
@click.option("--valid-outlets", type=int, default=None)
@click.option("--valid-per-outlet", type=int, default=None)
@click.option("--train-size", type=int, default=None,
              help="Subsample the train split to this many articles (balanced).")
@tool_command
def cmd_prepare_data(corpus_path, out_path, seed, config_path, min_articles,
                     merge_map_path, train_per_class, test1_outlets,
                     test1_per_outlet, test2_outlets, test2_per_outlet,
                     valid_outlets, valid_per_outlet, train_size):
    """Build the outlet-disjoint, class-balanced split manifest."""
    articles = _load_corpus(corpus_path)
    merge_map = None
    if merge_map_path:
        merge_map = json.loads(Path(merge_map_path).read_text(encoding="utf-8"))
    articles = corpus_mod.filter_and_merge_outlets(articles, min_articles, merge_map)

    fields: dict = {}
    if config_path:
        fields.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
    overrides = {
        "train_per_class": train_per_class,
        "test1_outlets_per_class": test1_outlets,
        "test1_per_outlet": test1_per_outlet,
        "test2_outlets_per_class": test2_outlets,
        "test2_per_outlet": test2_per_outlet,
        "valid_outlets_per_class": valid_outlets,
        "valid_per_outlet": valid_per_outlet,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    config = corpus_mod.SplitConfig.from_dict(fields)

    manifest = corpus_mod.build_augmented_split(articles, config, seed)
    if train_size is not None:
        manifest = corpus_mod.subsample_train(manifest, train_size, seed)
    manifest.save(_ensure_parent(out_path))
    counts = {k: sum(v.values()) for k, v in manifest.per_class_counts.items()}
    click.echo(f"wrote {out_path}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@main.command("train")
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--encoder", "encoder_name", default="hash64", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--epochs", default=25, show_default=True, type=int)
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--max-lr", default=5e-5, show_default=True, type=float)
@click.option("--weight-decay", default=1e-5, show_default=True, type=float)
@click.option("--warmup-fraction", default=0.1, show_default=True, type=float)
@click.option("--d-h", default=512, show_default=True, type=int)
@click.option("--lstm-layers", default=2, show_default=True, type=int)
@click.option("--heads", default=8, show_default=True, type=int)
@click.option("--head-dim", default=None, type=int)
@click.option("--max-sentences", default=128, show_default=True, type=int)
@click.option("--model-tag", default="hier-attn", show_default=True)
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--save-best", is_flag=True, default=False,
              help="Also keep the best-validation checkpoint.")
@click.option("--jobs", default=1, show_default=True, type=int,
              help="Parallel workers for the embedding cache fill.")
@tool_command
def cmd_train(corpus_path, manifest_path, out_dir, encoder_name, seed, epochs,
              batch_size, max_lr, weight_decay, warmup_fraction, d_h,
              lstm_layers, heads, head_dim, max_sentences, model_tag,
              cache_dir, save_best, jobs):
    """Train the hierarchical attention model on a split manifest."""
    articles = _load_corpus(corpus_path)
    manifest = corpus_mod.SplitManifest.load(manifest_path, articles)
    cache = _cache(cache_dir)
    corpus_id = corpus_fingerprint(corpus_path)
    enc_name, enc_version, enc_dim = encoder_metadata(encoder_name, cache, corpus_id)
    model_config = ModelConfig(
        d_s=enc_dim, d_h=d_h, lstm_layers=lstm_layers, num_heads=heads,
        head_dim=head_dim, max_sentences=max_sentences,
    )
    train_config = training_mod.TrainConfig(
        epochs=epochs, weight_decay=weight_decay, max_lr=max_lr,
        warmup_fraction=warmup_fraction, batch_size=batch_size, seed=seed,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, {
        "command": "train",
        "corpus": str(corpus_path),
        "manifest": str(manifest_path),
        "encoder": {"name": enc_name, "version": enc_version, "dim": enc_dim},
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
        "model_tag": model_tag,
    })

    result = training_mod.train(
        manifest, articles, encoder_name, model_config, train_config,
        cache=cache, corpus_id=corpus_id,
        log_path=out / "epochs.jsonl", track_best=save_best, jobs=jobs,
    )
    ckpt_kwargs = dict(
        seed=seed,
        epoch=train_config.epochs - 1,
        encoder_name=enc_name,
        encoder_version=enc_version,
        encoder_dim=enc_dim,
        model_tag=model_tag,
        train_size=len(manifest.splits["train"]),
        train_config=train_config.to_dict(),
    )
    save_checkpoint(out / "checkpoint.nbck", result.model, **ckpt_kwargs)
    if save_best and result.best_state is not None:
        result.model.load_state_dict(result.best_state)
        save_checkpoint(out / "checkpoint_best.nbck", result.model, **ckpt_kwargs)
    final = result.history[-1]
    click.echo(
        f"trained {train_config.epochs} epochs; final train loss "
        f"{final['train_loss']:.4f}; checkpoint at {out / 'checkpoint.nbck'}"
    )


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--split", required=True, type=click.Choice(["train", "test1", "test2", "valid"]))
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="TrialResult JSONL file; the row is appended.")
@click.option("--model-tag", default=None, help="Override the checkpoint's tag.")
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--cache-dir", default=None, type=click.Path())
@tool_command
def cmd_evaluate(checkpoint_path, corpus_path, manifest_path, split, out_path,
                 model_tag, batch_size, cache_dir):
    """Evaluate a checkpoint on one split and append the trial row."""
    articles = _load_corpus(corpus_path)
    manifest = corpus_mod.SplitManifest.load(manifest_path, articles)
    result = metrics_mod.evaluate(
        checkpoint_path, manifest, split, articles,
        cache=_cache(cache_dir), corpus_id=corpus_fingerprint(corpus_path),
        batch_size=batch_size, model_tag=model_tag,
    )
    metrics_mod.append_trial(_ensure_parent(out_path), result)
    click.echo(result.to_row())


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

@main.command("stats")
@click.option("--results", "results_path", required=True, type=click.Path())
@click.option("--baseline-tag", required=True)
@click.option("--ours-tag", required=True)
@click.option("--test-sets", default="test1,test2", show_default=True)
@click.option("--sizes", default=None,
              help="Comma-separated train sizes; defaults to all present.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--format", "fmt", default="both", show_default=True,
              type=click.Choice(["json", "text", "both"]))
@click.option("--figures/--no-figures", default=True, show_default=True)
@tool_command
def cmd_stats(results_path, baseline_tag, ours_tag, test_sets, sizes, out_dir,
              fmt, figures):
    """Aggregate trial results into the robustness comparison report."""
    results = metrics_mod.read_trials(results_path)
    spec = stats_mod.ComparisonSpec(
        baseline_tag=baseline_tag,
        ours_tag=ours_tag,
        test_sets=tuple(s.strip() for s in test_sets.split(",") if s.strip()),
        train_sizes=tuple(int(s) for s in sizes.split(",")) if sizes else None,
    )
    report = stats_mod.build_comparison_report(results, spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt in ("json", "both"):
        (out / "report.json").write_text(stats_mod.report_to_json(report), encoding="utf-8")
    if fmt in ("text", "both"):
        text = stats_mod.render_report_text(report)
        (out / "report.txt").write_text(text, encoding="utf-8")
        click.echo(text, nl=False)
    if figures:
        from .figures import save_learning_curve

        save_learning_curve(report, out / "learning_curve.png")
    click.echo(f"report written to {out}")


# ---------------------------------------------------------------------------
# analyze-structure
# ---------------------------------------------------------------------------

def _traces_for(checkpoint_path, corpus_path, manifest_path, split, cache_dir):
    articles = _load_corpus(corpus_path)
    if manifest_path:
        manifest = corpus_mod.SplitManifest.load(manifest_path, articles)
        keep = set(manifest.splits.get(split or "train", []))
        articles = [a for a in articles if a.id in keep]
        if not articles:
            raise NewsbiasError(f"no articles selected from split {split!r}")
    ckpt = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(ckpt)
    enc_name = ckpt.header["encoder"]["name"]
    encoded = embed_articles(
        articles, enc_name, model.config.max_sentences,
        cache=_cache(cache_dir),
        corpus_id=corpus_fingerprint(corpus_path),
    )
    traces = {a.id: model.trace(encoded[a.id]) for a in sorted(articles, key=lambda a: a.id)}
    return articles, traces


@main.command("analyze-structure")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--split", default=None)
@click.option("--k", default=3, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--bins", default=10, show_default=True, type=int)
@click.option("--min-words", default=structure_mod.DEFAULT_MIN_WORDS, show_default=True, type=int)
@click.option("--max-words", default=structure_mod.DEFAULT_MAX_WORDS, show_default=True, type=int)
@click.option("--series", default="salience", show_default=True,
              type=click.Choice(["salience", "onehot"]))
@click.option("--dedup/--no-dedup", default=True, show_default=True,
              help="Deduplicate repeated main-sentence locations per article.")
@click.option("--annotations", "annotations_path", default=None, type=click.Path(),
              help="Sentence-level bias annotations (JSON) for cluster stats.")
@click.option("--export-main-sentences", is_flag=True, default=False)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--cache-dir", default=None, type=click.Path())
@tool_command
def cmd_analyze_structure(checkpoint_path, corpus_path, out_dir, manifest_path,
                          split, k, seed, bins, min_words, max_words, series,
                          dedup, annotations_path, export_main_sentences, jobs,
                          figures, cache_dir):
    """Profile main-sentence locations, cluster by DTW, emit densities."""
    articles, traces = _traces_for(
        checkpoint_path, corpus_path, manifest_path, split, cache_dir
    )
    annotations = (
        structure_mod.load_annotations(annotations_path) if annotations_path else None
    )
    by_id = {a.id: a for a in articles}
    profiles = [
        structure_mod.build_profile(traces[a.id], a, dedup_locations=dedup,
                                    annotations=annotations)
        for a in sorted(articles, key=lambda a: a.id)
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, {
        "command": "analyze-structure",
        "checkpoint": str(checkpoint_path),
        "corpus": str(corpus_path),
        "k": k, "seed": seed, "bins": bins,
        "min_words": min_words, "max_words": max_words,
        "series": series, "dedup": dedup, "jobs": jobs,
    })
    with (out / "profiles.jsonl").open("w", encoding="utf-8") as fh:
        for p in profiles:
            fh.write(p.to_row() + "\n")

    kept = structure_mod.filter_profiles(profiles, min_words, max_words)
    if not kept:
        raise NewsbiasError(
            f"word-count filter [{min_words}, {max_words}] removed every article"
        )
    report = structure_mod.cluster_profiles(kept, k, seed, jobs=jobs, series=series)
    (out / "clusters.json").write_text(report.to_json(), encoding="utf-8")

    for entry in report.clusters:
        cid = entry["id"]
        density = structure_mod.location_density(kept, report.assignments, cid, bins)
        density.write_csv(out / f"density_cluster_{cid}.csv")
        density.write_rug_csv(out / f"density_cluster_{cid}_rug.csv")
        if figures:
            from .figures import save_density_figure

            save_density_figure(
                density, out / f"density_cluster_{cid}.png",
                title=f"cluster {cid} ({entry['size_pct']:.1f}%)",
            )

    if export_main_sentences:
        with (out / "main_sentences.jsonl").open("w", encoding="utf-8") as fh:
            for p in kept:
                row = structure_mod.main_sentence_export(traces[p.article_id], by_id[p.article_id])
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    sizes = ", ".join(f"{c['id']}:{c['size_pct']:.1f}%" for c in report.clusters)
    click.echo(f"clustered {len(kept)} articles into k={k} ({sizes}); outputs in {out}")


# ---------------------------------------------------------------------------
# extract-main-sentences
# ---------------------------------------------------------------------------

@main.command("extract-main-sentences")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--split", default=None)
@click.option("--cache-dir", default=None, type=click.Path())
@tool_command
def cmd_extract_main_sentences(checkpoint_path, corpus_path, out_path,
                               manifest_path, split, cache_dir):
    """Write each article's extracted main sentences as JSONL."""
    articles, traces = _traces_for(
        checkpoint_path, corpus_path, manifest_path, split, cache_dir
    )
    with _ensure_parent(out_path).open("w", encoding="utf-8") as fh:
        for a in sorted(articles, key=lambda a: a.id):
            row = structure_mod.main_sentence_export(traces[a.id], a)
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    click.echo(f"wrote main sentences for {len(articles)} articles to {out_path}")


if __name__ == "__main__":
    main()
