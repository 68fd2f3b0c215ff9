"""Stage driver: embed, train-rqvae, build-sids, prepare-corpus, train-lm,
evaluate, with make-style staleness skipping and a hash manifest.

Stages communicate only through files, so any stage can also be run on its
own from the command line. A stage is skipped when every output exists and is
at least as new as every input; --force reruns everything. The manifest maps
each stage to a sha256 over its output bytes, which is how the determinism
check compares two runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import yaml

from . import catalog as cat
from . import collision, corpus, metrics, rqvae, sid, toylm

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failed; the message names the stage."""


@dataclass(frozen=True)
class PipelineConfig:
    catalog: str
    dialogs: str
    out_dir: str
    seed: int = 0
    embedding_dim: int = 64
    rqvae_hidden_layers: int = 2
    rqvae_latent_dim: int = 32
    rqvae_levels: int = 3
    rqvae_codebook_size: int = 16
    rqvae_epochs: int = 20
    rqvae_learning_rate: float = 1e-3
    rqvae_batch_size: int = 1024
    corpus_format: str = corpus.FULL
    test_fraction: float = 0.2
    lm_d_model: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    lm_context_len: int = 256
    # pilot on the seed-7 synthetic corpus: 5000 steps reaches held-out
    # Recall@1 0.95 / Recall@5 1.0 / mode accuracy 1.0 in about 5 minutes
    lm_steps: int = 5000
    lm_learning_rate: float = 0.5
    lm_batch_size: int = 16
    lm_weight_decay: float = 1e-4
    lm_policy: str = toylm.ALL
    beam_width: int = 50
    max_text_tokens: int = 40
    eval_runs: int = 1

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise PipelineError(f"{path}: expected flat key-value pairs")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise PipelineError(
                f"{path}: unknown keys {sorted(unknown)}")
        missing = {"catalog", "dialogs", "out_dir"} - set(raw)
        if missing:
            raise PipelineError(f"{path}: missing keys {sorted(missing)}")
        return cls(**raw)


@dataclass
class StageResult:
    name: str
    ran: bool
    outputs: List[str]


@dataclass
class PipelineResult:
    stages: List[StageResult]
    manifest_path: str
    paths: Dict[str, str]

    def ran(self) -> List[str]:
        return [s.name for s in self.stages if s.ran]


def _artifact_paths(config: PipelineConfig) -> Dict[str, str]:
    out = Path(config.out_dir)
    return {
        "embeddings": str(out / "embeddings.bin"),
        "rqvae": str(out / "rqvae.ckpt"),
        "sids": str(out / "sids.tsv"),
        "corpus_dir": str(out / "corpus"),
        "vocab": str(out / "corpus" / "vocab.txt"),
        "train": str(out / "corpus" / "train.jsonl"),
        "test": str(out / "corpus" / "test.jsonl"),
        "meta": str(out / "corpus" / "meta.json"),
        "lm": str(out / "lm.ckpt"),
        "report": str(out / "report.json"),
        "manifest": str(out / "manifest.json"),
    }


def stage_embed(catalog_path, out_path, dim: int, seed: int) -> None:
    catalog = cat.load_catalog(catalog_path)
    matrix = cat.embed_catalog(catalog, dim=dim, seed=seed)
    cat.save_embeddings(out_path, matrix)


def stage_train_rqvae(emb_path, out_path, config: PipelineConfig) -> None:
    data = cat.load_embeddings(emb_path)
    cfg = rqvae.RqVaeConfig(
        input_dim=data.dim,
        encoder_hidden_layers=config.rqvae_hidden_layers,
        latent_dim=config.rqvae_latent_dim,
        num_levels=config.rqvae_levels,
        codebook_size=config.rqvae_codebook_size,
        epochs=config.rqvae_epochs,
        learning_rate=config.rqvae_learning_rate,
        batch_size=config.rqvae_batch_size,
        seed=config.seed)
    model = rqvae.train(cfg, data)
    rqvae.save_model(out_path, model)


def stage_build_sids(emb_path, rqvae_path, catalog_path, out_path) -> None:
    catalog = cat.load_catalog(catalog_path)
    data = cat.load_embeddings(emb_path, catalog)
    model = rqvae.load_model(rqvae_path)
    results = rqvae.assign_ids(model, data)
    raw = [tuple(int(c) for c in r.codes) for r in results]
    assignment = collision.resolve_collisions(raw, results, model.codebooks)
    vocab = sid.SidVocabulary(num_levels=model.config.num_levels,
                              codebook_size=model.config.codebook_size)
    sid.save_sid_table(out_path, assignment, catalog, vocab)


def stage_prepare_corpus(dialogs_path, catalog_path, sids_path, corpus_dir,
                         format: str, test_fraction: float, seed: int,
                         num_levels: int, codebook_size: int) -> None:
    catalog = cat.load_catalog(catalog_path)
    sids = sid.load_sid_table(sids_path)
    dialogs = corpus.load_dialogs(
        dialogs_path, known_items={i.item_id for i in catalog.items})
    sv = sid.SidVocabulary(num_levels=num_levels, codebook_size=codebook_size)
    rewritten = [corpus.replace_mentions(d, sids, sv) for d in dialogs]
    texts = [t.text for d in rewritten for t in d.turns]
    # role markers appear only in serialized contexts, not in turn texts
    texts += [corpus.serialize_context(d.turns) for d in rewritten]
    tokenizer = corpus.Tokenizer.build(texts, sv)
    samples = [s for d in rewritten
               for s in corpus.build_samples(d, format, tokenizer)]
    split = corpus.split_eval(samples, rewritten,
                              test_fraction=test_fraction, seed=seed)
    out = Path(corpus_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokenizer.save(out / "vocab.txt")
    corpus.save_samples(out / "train.jsonl", split["train"])
    corpus.save_samples(out / "test.jsonl", split["test"])
    meta = {"num_levels": num_levels, "codebook_size": codebook_size,
            "format": format, "test_fraction": test_fraction, "seed": seed}
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_corpus_dir(corpus_dir):
    """(tokenizer, train samples, test samples, meta) from a corpus folder."""
    out = Path(corpus_dir)
    with open(out / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    sv = sid.SidVocabulary(num_levels=meta["num_levels"],
                           codebook_size=meta["codebook_size"])
    tokenizer = corpus.Tokenizer.load(out / "vocab.txt", sv)
    train = corpus.load_samples(out / "train.jsonl")
    test = corpus.load_samples(out / "test.jsonl")
    return tokenizer, train, test, meta


def _lm_config(config: PipelineConfig, tokenizer, seed: int) -> toylm.LmConfig:
    new_start = tokenizer.base_size \
        if config.lm_policy == toylm.NEW_TOKENS_ONLY else 0
    return toylm.LmConfig(
        vocab_size=tokenizer.vocab_size,
        d_model=config.lm_d_model,
        n_layers=config.lm_layers,
        n_heads=config.lm_heads,
        context_len=config.lm_context_len,
        learning_rate=config.lm_learning_rate,
        weight_decay=config.lm_weight_decay,
        batch_size=config.lm_batch_size,
        steps=config.lm_steps,
        seed=seed,
        trainable_embedding_policy=config.lm_policy,
        new_token_start=new_start)


def stage_train_lm(corpus_dir, out_path, config: PipelineConfig) -> None:
    tokenizer, train, _, _ = load_corpus_dir(corpus_dir)
    if not train:
        raise PipelineError("train split is empty")
    model = toylm.train_lm(_lm_config(config, tokenizer, config.seed), train)
    toylm.save_lm(out_path, model, vocab_sha256=toylm.vocab_hash(tokenizer))


def _load_trie(sids_path, catalog_path) -> sid.SidTrie:
    catalog = cat.load_catalog(catalog_path)
    table = sid.load_sid_table(sids_path)
    missing = [i.item_id for i in catalog.items if i.item_id not in table]
    if missing:
        raise PipelineError(f"sid table lacks items {missing[:5]}")
    assignment = collision.IdAssignment(
        codes_by_item=[table[i.item_id] for i in catalog.items],
        changed=set())
    return sid.build_trie(assignment, catalog)


def stage_evaluate(lm_path, sids_path, catalog_path, corpus_dir, out_path,
                   config: PipelineConfig) -> None:
    tokenizer, train, test, _ = load_corpus_dir(corpus_dir)
    trie = _load_trie(sids_path, catalog_path)
    eval_split = test if test else train
    reports = []
    accs = []
    for run in range(max(config.eval_runs, 1)):
        if run == 0:
            model = toylm.load_lm(
                lm_path, expect_vocab_sha256=toylm.vocab_hash(tokenizer))
        else:
            # extra runs retrain with shifted seeds, per the averaging protocol
            model = toylm.train_lm(
                _lm_config(config, tokenizer, config.seed + run), train)
        reports.append(metrics.eval_protocol(
            model, tokenizer, trie, eval_split,
            beam_width=config.beam_width,
            max_text_tokens=config.max_text_tokens))
        accs.append(metrics.mode_accuracy(
            model, tokenizer, trie, eval_split,
            max_text_tokens=config.max_text_tokens))
    report = metrics.average_reports(reports)
    payload = report.to_dict()
    payload["mode_accuracy"] = float(sum(accs) / len(accs))
    payload["runs"] = len(reports)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _sha256_paths(paths: List[str]) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(os.path.basename(p).encode("utf-8"))
        h.update(b"\x00")
        with open(p, "rb") as fh:
            h.update(fh.read())
        h.update(b"\x00")
    return h.hexdigest()


def _is_fresh(inputs: List[str], outputs: List[str]) -> bool:
    if not all(os.path.exists(p) for p in outputs):
        return False
    newest_in = max(os.path.getmtime(p) for p in inputs)
    oldest_out = min(os.path.getmtime(p) for p in outputs)
    return oldest_out >= newest_in


def run_pipeline(config: PipelineConfig, force: bool = False) -> PipelineResult:
    paths = _artifact_paths(config)
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    corpus_files = [paths["vocab"], paths["train"], paths["test"],
                    paths["meta"]]
    stages: List[Tuple[str, List[str], List[str], Callable[[], None]]] = [
        ("embed", [config.catalog], [paths["embeddings"]],
         lambda: stage_embed(config.catalog, paths["embeddings"],
                             config.embedding_dim, config.seed)),
        ("train-rqvae", [paths["embeddings"]], [paths["rqvae"]],
         lambda: stage_train_rqvae(paths["embeddings"], paths["rqvae"],
                                   config)),
        ("build-sids", [paths["embeddings"], paths["rqvae"], config.catalog],
         [paths["sids"]],
         lambda: stage_build_sids(paths["embeddings"], paths["rqvae"],
                                  config.catalog, paths["sids"])),
        ("prepare-corpus", [config.dialogs, config.catalog, paths["sids"]],
         corpus_files,
         lambda: stage_prepare_corpus(
             config.dialogs, config.catalog, paths["sids"],
             paths["corpus_dir"], config.corpus_format, config.test_fraction,
             config.seed, config.rqvae_levels, config.rqvae_codebook_size)),
        ("train-lm", corpus_files, [paths["lm"]],
         lambda: stage_train_lm(paths["corpus_dir"], paths["lm"], config)),
        ("evaluate",
         [paths["lm"], paths["sids"], config.catalog] + corpus_files,
         [paths["report"]],
         lambda: stage_evaluate(paths["lm"], paths["sids"], config.catalog,
                                paths["corpus_dir"], paths["report"],
                                config)),
    ]
    results: List[StageResult] = []
    manifest: Dict[str, str] = {}
    for name, inputs, outputs, fn in stages:
        missing = [p for p in inputs if not os.path.exists(p)]
        if missing:
            raise PipelineError(f"stage {name}: missing inputs {missing}")
        if not force and _is_fresh(inputs, outputs):
            log.info("stage %s: up to date", name)
            results.append(StageResult(name=name, ran=False, outputs=outputs))
        else:
            log.info("stage %s: running", name)
            try:
                fn()
            except Exception as exc:
                raise PipelineError(f"stage {name}: {exc}") from exc
            results.append(StageResult(name=name, ran=True, outputs=outputs))
        manifest[name] = _sha256_paths(outputs)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return PipelineResult(stages=results, manifest_path=paths["manifest"],
                          paths=paths)
