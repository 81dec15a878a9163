"""Command-line entry point: ``blinky-aec <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .errors import BlinkyError, ConfigError, DataError


def _run(fn):
    try:
        return fn()
    except BlinkyError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log training progress.")
def main(verbose):
    """Acoustic event classification over a simulated Blinky optical link."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.option("--root", required=True, type=click.Path(), help="ESC-50 root directory.")
@click.option("--out", default=".", type=click.Path(), help="Where to write manifest and splits.")
@click.option("--seed", default=0, show_default=True, help="Split seed.")
@click.option("--n-classes", default=50, show_default=True)
def ingest(root, out, seed, n_classes):
    """Validate the corpus and write manifest.csv and splits.csv."""
    from .dataset import ingest_esc50, make_splits

    def go():
        manifest = ingest_esc50(root, n_classes)
        splits = make_splits(manifest, (8, 1, 1), seed)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest.write(out_dir / "manifest.csv")
        splits.write(out_dir / "splits.csv")
        counts = {s: len(splits.ids(s)) for s in ("train", "validation", "test")}
        click.echo(f"{len(manifest.clips)} clips, {manifest.class_count} classes, "
                   f"{manifest.clips_per_class} per class; splits {counts}")
    _run(go)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--sigma", type=float, default=None, help="Latent noise std (0 = plain autoencoder).")
def pretrain(config_path, sigma):
    """Pre-train an autoencoder bundle (reused by later runs)."""
    from .config import load_config
    from .experiment import Workspace, obtain_pretrained

    def go():
        cfg = load_config(config_path)
        s = cfg.pretrain.latent_noise_sigma if sigma is None else sigma
        if s < 0:
            raise ConfigError("sigma must be >= 0")
        bundle, path = obtain_pretrained(cfg, Workspace(cfg), s)
        click.echo(json.dumps({"bundle": str(path), "sigma": s,
                               "best_epoch": bundle.metadata.get("best_epoch"),
                               "best_val_loss": bundle.metadata.get("best_val_loss")}))
    _run(go)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", type=str, default=None)
@click.option("--scenario", type=str, default=None)
@click.option("--seed", type=int, default=None)
def train(config_path, mode, scenario, seed):
    """Run one pipeline: record, train, select on validation, score on test."""
    from .config import load_config
    from .experiment import run_pipeline

    def go():
        cfg = load_config(config_path, embedding_mode=mode, scenario=scenario, seed=seed)
        r = run_pipeline(cfg)
        click.echo(json.dumps({"mode": r.embedding_mode, "scenario": r.scenario, "seed": r.seed,
                               "macro_f1": r.macro_f1, "checkpoint": r.checkpoint}))
    _run(go)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def campaign(config_path):
    """Run every mode x scenario x seed of the campaign, then report."""
    from .config import load_config
    from .experiment import run_campaign

    def go():
        cfg = load_config(config_path)
        results = run_campaign(cfg)
        click.echo(f"{len(results)} runs; report written to {cfg.output_dir}")
    _run(go)


@main.command()
@click.option("--bundle", "bundle_path", required=True, type=click.Path())
@click.option("--scenario", required=True, type=str)
@click.option("--data-root", default=None, type=click.Path())
def evaluate(bundle_path, scenario, data_root):
    """Re-score a run checkpoint on the test split."""
    from .experiment import evaluate_bundle

    def go():
        if not Path(bundle_path).is_file():
            raise DataError(f"bundle not found: {bundle_path}")
        r = evaluate_bundle(bundle_path, scenario, dataset_root=data_root)
        click.echo(json.dumps({"mode": r.embedding_mode, "scenario": r.scenario,
                               "macro_f1": r.macro_f1}))
    _run(go)


@main.command()
@click.option("--runs", "runs_dir", required=True, type=click.Path())
def report(runs_dir):
    """Aggregate result.json files under a directory into table, CSV and plot."""
    from .experiment import aggregate_and_report, load_results

    def go():
        results = load_results(runs_dir)
        if not results:
            raise DataError(f"no result.json files under {runs_dir}")
        paths = aggregate_and_report(results, runs_dir)
        click.echo(paths["table"].read_text(), nl=False)
    _run(go)


if __name__ == "__main__":
    main()
