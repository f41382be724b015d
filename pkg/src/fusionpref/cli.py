"""Command-line entry point orchestrating the pipeline stages.

Each stage reads the declarative run config, writes its artifacts under the
run directory, and records a machine-readable `run_<stage>.json` with the
config hash, input hashes, and produced outputs. Completed stages are
skipped on rerun unless --force is given.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import torch

from . import ckpt
from .codec import PatchifyCodec
from .config import ConfigError, RunConfig, load_config
from .corpus import load_corpus, load_target_mask, make_synthetic_corpus
from .images import save_image
from .metrics import all_metrics, scd
from .paldm import (
    PaldmTrainConfig,
    default_prompt_set,
    generate_candidates,
    load_candidate_index,
    save_candidates,
    train_paldm,
)
from .pcldm import FinetuneConfig, example_from_record, finetune_idpo, fuse_with_preference
from .prefdata import collect_global, get_scorer, load_manifest
from .prior import PriorTrainConfig, train_prior
from .schedule import build_linear_schedule


class StageError(click.ClickException):
    exit_code = 2


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


class Stage:
    """Bookkeeping for one resumable pipeline stage."""

    def __init__(self, name: str, cfg: RunConfig, base: Path, force: bool):
        self.name = name
        self.cfg = cfg
        self.base = base
        self.force = force
        self.run_dir = base / cfg.run_dir
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.marker = self.run_dir / f"run_{name}.json"

    def done(self, outputs: list[Path]) -> bool:
        if self.force or not self.marker.exists():
            return False
        try:
            prev = json.loads(self.marker.read_text())
        except json.JSONDecodeError:
            return False
        return prev.get("config_hash") == self.cfg.config_hash() and all(
            p.exists() for p in outputs
        )

    def record(self, inputs: list[Path], outputs: list[Path]) -> None:
        self.marker.write_text(
            json.dumps(
                {
                    "stage": self.name,
                    "config_hash": self.cfg.config_hash(),
                    "seed": self.cfg.seed,
                    "inputs": {str(p): _sha256(p) for p in inputs if p.is_file()},
                    "outputs": {str(p): _sha256(p) for p in outputs if p.is_file()},
                },
                indent=2,
                sort_keys=True,
            )
        )


def _require(path: Path, what: str, producers: str) -> Path:
    if not path.exists():
        raise StageError(
            f"missing dependency: {what} not found at {path}; produce it with `{producers}` first"
        )
    return path


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--force", is_flag=True, help="rerun stages even if outputs exist")
@click.pass_context
def main(ctx, config_path, seed, force):
    """Preference-controllable IR/VIS fusion pipeline."""
    try:
        cfg = load_config(config_path, {"seed": seed})
    except ConfigError as e:
        raise StageError(str(e)) from e
    base = Path(config_path).resolve().parent
    ctx.obj = {"cfg": cfg, "base": base, "force": force}


def _common(ctx) -> tuple[RunConfig, Path, bool]:
    return ctx.obj["cfg"], ctx.obj["base"], ctx.obj["force"]


def _codec(cfg: RunConfig):
    if cfg.codec == "patchify":
        return PatchifyCodec(cfg.codec_factor)
    raise StageError("tiny-autoencoder codec requires a trained checkpoint; train it via the API")


def _sched(cfg: RunConfig):
    return build_linear_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)


@main.command("make-corpus")
@click.option("--n", type=int, required=True)
@click.option("--size", type=int, default=64)
@click.pass_context
def cmd_make_corpus(ctx, n, size):
    """Generate the synthetic IR/VIS corpus with target masks."""
    cfg, base, force = _common(ctx)
    stage = Stage("make_corpus", cfg, base, force)
    corpus_dir = base / cfg.corpus_dir
    if stage.done([corpus_dir / "0000_ir.png"]):
        click.echo("make-corpus: up to date")
        return
    if size % cfg.codec_factor:
        raise StageError(f"size {size} not divisible by codec factor {cfg.codec_factor}")
    make_synthetic_corpus(n, size, cfg.seed, corpus_dir)
    stage.record([], [corpus_dir / "0000_ir.png"])
    click.echo(f"wrote {n} pairs to {corpus_dir}")


@main.command("train-lfm")
@click.pass_context
def cmd_train_lfm(ctx):
    """Train the prior latent fusion model."""
    cfg, base, force = _common(ctx)
    stage = Stage("train_lfm", cfg, base, force)
    out = stage.run_dir / "checkpoints" / "prior.pt"
    if stage.done([out]):
        click.echo("train-lfm: up to date")
        return
    corpus_dir = _require(base / cfg.corpus_dir, "corpus directory", "make-corpus")
    corpus = load_corpus(corpus_dir)
    result = train_prior(
        corpus,
        _codec(cfg),
        PriorTrainConfig(
            epochs=cfg.prior_epochs,
            lr=cfg.lr_prior,
            batch_size=cfg.batch_size,
            sigma1=cfg.sigma1,
            sigma2=cfg.sigma2,
            seed=cfg.seed,
            width=cfg.prior_width,
            blocks=cfg.prior_blocks,
        ),
    )
    ckpt.save_prior(out, result.model)
    stage.record([corpus_dir / "0000_ir.png"], [out])
    click.echo(
        f"prior fusion loss {result.initial_loss:.4f} -> {result.best_loss:.4f} "
        f"({'converged' if result.converged else 'NOT converged'})"
    )


@main.command("train-paldm")
@click.pass_context
def cmd_train_paldm(ctx):
    """Train the property-aligned denoiser on top of the frozen prior."""
    cfg, base, force = _common(ctx)
    stage = Stage("train_paldm", cfg, base, force)
    out = stage.run_dir / "checkpoints" / "paldm.pt"
    if stage.done([out]):
        click.echo("train-paldm: up to date")
        return
    prior_path = _require(stage.run_dir / "checkpoints" / "prior.pt", "prior checkpoint", "train-lfm")
    corpus = load_corpus(_require(base / cfg.corpus_dir, "corpus directory", "make-corpus"))
    result = train_paldm(
        ckpt.load_prior(prior_path),
        corpus,
        _codec(cfg),
        _sched(cfg),
        PaldmTrainConfig(
            steps=cfg.paldm_steps,
            lr=cfg.lr_paldm,
            batch_size=cfg.batch_size,
            lam=cfg.lam,
            n_levels=cfg.n_levels,
            base_width=cfg.base_width,
            prompt_dim=cfg.prompt_dim,
            seed=cfg.seed,
        ),
    )
    ckpt.save_denoiser(out, result.model)
    stage.record([prior_path], [out])
    click.echo(
        f"denoiser validation loss {result.initial_val_loss:.4f} -> {result.best_val_loss:.4f} "
        f"({'converged' if result.converged else 'NOT converged'})"
    )


@main.command("generate-candidates")
@click.option("--pairs", type=int, default=None, help="limit to the first N pairs")
@click.pass_context
def cmd_generate(ctx, pairs):
    """Sample one candidate per prompt (general + N levels) for each pair."""
    cfg, base, force = _common(ctx)
    stage = Stage("generate", cfg, base, force)
    cand_dir = stage.run_dir / "candidates"
    if stage.done([cand_dir / "index.json"]):
        click.echo("generate-candidates: up to date")
        return
    model_path = _require(stage.run_dir / "checkpoints" / "paldm.pt", "denoiser checkpoint", "train-paldm")
    model = ckpt.load_denoiser(model_path)
    corpus_dir = _require(base / cfg.corpus_dir, "corpus directory", "make-corpus")
    corpus = load_corpus(corpus_dir)
    if pairs is not None:
        corpus = corpus[:pairs]
    codec, sched = _codec(cfg), _sched(cfg)
    prompts = default_prompt_set(cfg.n_levels)
    import os

    for pair in corpus:
        results = generate_candidates(model, pair, prompts, codec, sched, cfg.sampler_steps, cfg.seed)
        rel = Path(os.path.relpath(corpus_dir, cand_dir))
        save_candidates(
            cand_dir,
            pair,
            results,
            str(rel / f"{pair.pair_id}_ir.png"),
            str(rel / f"{pair.pair_id}_vis.png"),
        )
    stage.record([model_path], [cand_dir / "index.json"])
    click.echo(f"wrote candidates for {len(corpus)} pairs to {cand_dir}")


@main.command("autopref")
@click.option("--scorer", "scorer_name", default="sd", show_default=True)
@click.option("--use-target-masks/--whole-image", default=True, show_default=True)
@click.pass_context
def cmd_autopref(ctx, scorer_name, use_target_masks):
    """Collect programmatic preference records over the generated candidates."""
    cfg, base, force = _common(ctx)
    stage = Stage("autopref", cfg, base, force)
    cand_dir = stage.run_dir / "candidates"
    manifest = cand_dir / "manifest.jsonl"
    if stage.done([manifest]):
        click.echo("autopref: up to date")
        return
    _require(cand_dir / "index.json", "candidate index", "generate-candidates")
    if manifest.exists():
        manifest.unlink()  # forced rerun starts a fresh manifest
    index = load_candidate_index(cand_dir)
    scorer = get_scorer(scorer_name)
    corpus_dir = base / cfg.corpus_dir
    n = 0
    for pair_id, entry in sorted(index["pairs"].items()):
        mask = None
        if use_target_masks:
            mask = load_target_mask(corpus_dir, pair_id)
        collect_global(
            cand_dir,
            pair_id,
            entry["ir"],
            entry["vis"],
            [c["file"] for c in entry["candidates"]],
            scorer,
            region_mask=mask,
        )
        n += 1
    stage.record([cand_dir / "index.json"], [manifest])
    click.echo(f"appended {n} auto preference records to {manifest}")


@main.command("annotate-serve")
@click.option("--bind", default="127.0.0.1:8000", show_default=True)
@click.pass_context
def cmd_annotate_serve(ctx, bind):
    """Serve the human annotation HTTP API over the candidate set."""
    cfg, base, _ = _common(ctx)
    cand_dir = base / cfg.run_dir / "candidates"
    _require(cand_dir / "index.json", "candidate index", "generate-candidates")
    from .service import serve

    serve(cand_dir, cand_dir / "manifest.jsonl", bind)


@main.command("finetune")
@click.option("--loss", "loss_kind", type=click.Choice(["idpo", "dpo", "contrast"]), default="idpo", show_default=True)
@click.pass_context
def cmd_finetune(ctx, loss_kind):
    """Fine-tune the preference-controlled model on the collected manifest."""
    cfg, base, force = _common(ctx)
    stage = Stage(f"finetune_{loss_kind}", cfg, base, force)
    out = stage.run_dir / "checkpoints" / f"coupled_{loss_kind}.pt"
    if stage.done([out]):
        click.echo("finetune: up to date")
        return
    ref_path = _require(stage.run_dir / "checkpoints" / "paldm.pt", "denoiser checkpoint", "train-paldm")
    manifest = _require(
        stage.run_dir / "candidates" / "manifest.jsonl",
        "manifest.jsonl",
        "autopref or annotate-serve",
    )
    codec = _codec(cfg)
    records = load_manifest(manifest)
    examples = [example_from_record(r, manifest.parent, codec) for r in records]
    result = finetune_idpo(
        ckpt.load_denoiser(ref_path),
        examples,
        _sched(cfg),
        FinetuneConfig(
            loss_kind=loss_kind,
            epochs=cfg.finetune_epochs,
            lr=cfg.lr_finetune,
            batch_size=cfg.batch_size,
            beta=cfg.beta_pref,
            mu=cfg.mu,
            seed=cfg.seed,
        ),
    )
    ckpt.save_coupled(out, result.model, loss_kind, cfg.beta_pref, cfg.mu)
    stage.record([ref_path, manifest], [out])
    click.echo(
        f"fine-tuned with {loss_kind} on {len(examples)} records; "
        f"initial preference term {result.initial_preference:.4f}"
    )


@main.command("fuse")
@click.option("--loss", "loss_kind", type=click.Choice(["idpo", "dpo", "contrast"]), default="idpo", show_default=True)
@click.option("--pairs", type=int, default=None)
@click.pass_context
def cmd_fuse(ctx, loss_kind, pairs):
    """Produce preference-aligned fusions with the fine-tuned model."""
    cfg, base, force = _common(ctx)
    stage = Stage(f"fuse_{loss_kind}", cfg, base, force)
    out_dir = stage.run_dir / "fused" / loss_kind
    model_path = _require(
        stage.run_dir / "checkpoints" / f"coupled_{loss_kind}.pt", "fine-tuned checkpoint", "finetune"
    )
    corpus = load_corpus(_require(base / cfg.corpus_dir, "corpus directory", "make-corpus"))
    if pairs is not None:
        corpus = corpus[:pairs]
    outputs = [out_dir / f"{p.pair_id}.png" for p in corpus]
    if stage.done(outputs):
        click.echo("fuse: up to date")
        return
    model, _meta = ckpt.load_coupled(model_path)
    codec, sched = _codec(cfg), _sched(cfg)
    for pair, out in zip(corpus, outputs):
        save_image(fuse_with_preference(model, pair, codec, sched, cfg.sampler_steps, cfg.seed), out)
    stage.record([model_path], outputs)
    click.echo(f"wrote {len(outputs)} fused images to {out_dir}")


@main.command("eval")
@click.option("--images", "images_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cmd_eval(ctx, images_dir, out_csv):
    """Emit a CSV of EN/SD/AG/SF (+SCD when sources are found) per image."""
    import csv

    from .images import load_image

    cfg, base, _ = _common(ctx)
    images_dir = Path(images_dir)
    corpus_dir = base / cfg.corpus_dir
    out_csv = Path(out_csv) if out_csv else images_dir / "eval.csv"
    files = sorted(images_dir.glob("*.png"))
    if not files:
        raise StageError(f"no PNG images under {images_dir}")
    rows = []
    for f in files:
        img = load_image(f)
        row = {"image": f.name, **{k: f"{v:.6f}" for k, v in all_metrics(img).items()}}
        ir_p = corpus_dir / f"{f.stem}_ir.png"
        vis_p = corpus_dir / f"{f.stem}_vis.png"
        if ir_p.exists() and vis_p.exists():
            row["SCD"] = f"{scd(img, load_image(ir_p), load_image(vis_p)):.6f}"
        rows.append(row)
    cols = ["image", "EN", "SD", "AG", "SF"] + (["SCD"] if any("SCD" in r for r in rows) else [])
    agg = {"image": "mean"}
    for c in cols[1:]:
        vals = [float(r[c]) for r in rows if c in r]
        agg[c] = f"{sum(vals) / len(vals):.6f}" if vals else ""
    with open(out_csv, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
        writer.writerow(agg)
    click.echo(f"wrote {out_csv}")


if __name__ == "__main__":
    main()
