"""Command line entry point.

`gencrs pipeline --config <file>` drives all stages with staleness skipping;
each stage also has its own subcommand that runs it unconditionally from the
same config file. `gencrs synth` writes the toy corpus the acceptance tests
train on, and `gencrs serve` exposes the chat service over HTTP.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import pipeline as pl
from . import synth as syn

log = logging.getLogger(__name__)


def _load_config(path: str) -> pl.PipelineConfig:
    try:
        return pl.PipelineConfig.from_file(path)
    except (OSError, pl.PipelineError, TypeError, ValueError) as exc:
        raise click.ClickException(str(exc))


def _require(paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise click.ClickException(f"missing inputs: {missing}")


@click.group()
@click.option("--verbose", is_flag=True, help="Log stage progress.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--force", is_flag=True, help="Rerun stages even if fresh.")
def pipeline(config_path: str, force: bool) -> None:
    """Run every stage in dependency order."""
    config = _load_config(config_path)
    try:
        result = pl.run_pipeline(config, force=force)
    except pl.PipelineError as exc:
        raise click.ClickException(str(exc))
    for stage in result.stages:
        click.echo(f"{stage.name}: {'ran' if stage.ran else 'skipped'}")
    click.echo(f"manifest: {result.manifest_path}")


@main.command()
@click.option("--items", default=40, show_default=True)
@click.option("--genres", default=8, show_default=True)
@click.option("--per-item", default=5, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def synth(items: int, genres: int, per_item: int, seed: int,
          out_dir: str) -> None:
    """Write a synthetic catalog and dialog corpus."""
    try:
        spec = syn.SyntheticSpec(n_items=items, n_genres=genres,
                                 dialogs_per_item=per_item, seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    paths = syn.make_synthetic(spec, out_dir)
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


def _stage_command(name: str):
    """Register a run-one-stage subcommand driven by the shared config."""

    def runner(config_path: str) -> None:
        config = _load_config(config_path)
        paths = pl._artifact_paths(config)
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        try:
            if name == "embed":
                _require([config.catalog])
                pl.stage_embed(config.catalog, paths["embeddings"],
                               config.embedding_dim, config.seed)
                outputs = [paths["embeddings"]]
            elif name == "train-rqvae":
                _require([paths["embeddings"]])
                pl.stage_train_rqvae(paths["embeddings"], paths["rqvae"],
                                     config)
                outputs = [paths["rqvae"]]
            elif name == "build-sids":
                _require([paths["embeddings"], paths["rqvae"],
                          config.catalog])
                pl.stage_build_sids(paths["embeddings"], paths["rqvae"],
                                    config.catalog, paths["sids"])
                outputs = [paths["sids"]]
            elif name == "prepare-corpus":
                _require([config.dialogs, config.catalog, paths["sids"]])
                pl.stage_prepare_corpus(
                    config.dialogs, config.catalog, paths["sids"],
                    paths["corpus_dir"], config.corpus_format,
                    config.test_fraction, config.seed,
                    config.rqvae_levels, config.rqvae_codebook_size)
                outputs = [paths["vocab"], paths["train"], paths["test"],
                           paths["meta"]]
            elif name == "train-lm":
                _require([paths["vocab"], paths["train"], paths["meta"]])
                pl.stage_train_lm(paths["corpus_dir"], paths["lm"], config)
                outputs = [paths["lm"]]
            elif name == "evaluate":
                _require([paths["lm"], paths["sids"], config.catalog,
                          paths["vocab"], paths["test"], paths["meta"]])
                pl.stage_evaluate(paths["lm"], paths["sids"], config.catalog,
                                  paths["corpus_dir"], paths["report"],
                                  config)
                outputs = [paths["report"]]
            else:  # pragma: no cover - registration bug
                raise click.ClickException(f"unknown stage {name}")
        except click.ClickException:
            raise
        except Exception as exc:
            raise click.ClickException(f"stage {name}: {exc}")
        for out in outputs:
            click.echo(out)

    runner.__name__ = name.replace("-", "_")
    runner = click.option("--config", "config_path", required=True,
                          type=click.Path(exists=True))(runner)
    return main.command(name=name)(runner)


for _name in ("embed", "train-rqvae", "build-sids", "prepare-corpus",
              "train-lm", "evaluate"):
    _stage_command(_name)


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--sids", "sids_path", required=True,
              type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True,
              type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True,
              type=click.Path(exists=True),
              help="Corpus directory holding vocab.txt and meta.json.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--static", "static_dir", default=None,
              type=click.Path(exists=True),
              help="Directory of UI files to serve at /.")
@click.option("--beam", "beam_width", default=50, show_default=True)
@click.option("--max-text-tokens", default=40, show_default=True)
@click.option("--debug", is_flag=True,
              help="Include raw token strings in responses.")
def serve(model_path: str, sids_path: str, catalog_path: str,
          corpus_dir: str, host: str, port: int, static_dir,
          beam_width: int, max_text_tokens: int, debug: bool) -> None:
    """Serve the chat API (and optionally the UI) over HTTP."""
    import uvicorn

    from . import service

    try:
        app = service.build_app_from_artifacts(
            model_path=model_path, sids_path=sids_path,
            catalog_path=catalog_path, corpus_dir=corpus_dir,
            static_dir=static_dir, beam_width=beam_width,
            max_text_tokens=max_text_tokens, debug=debug)
    except Exception as exc:
        raise click.ClickException(str(exc))
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
