"""Command-line pipeline.

Every subcommand takes ``--config``, ``--seed``, ``--profile`` and ``--out``.
Stages read upstream artifacts through ``<out>/manifest.json`` and are
skipped when their inputs and parameters are unchanged; ``all`` runs the
whole pipeline in order.  One pipeline may run per output directory at a
time (``<out>/.lock``).
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
from filelock import FileLock, Timeout

from .config import SCHEMA, ConfigError, load_config
from .manifest import Manifest, StageMissingError
from .stages import PIPELINE, Run, run_stage

logger = logging.getLogger("swingintent")


def _open_run(config, seed, profile, out) -> Run:
    cfg = load_config(config, seed=seed, profile=profile)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return Run(cfg, out, Manifest(out))


def _execute(stages, config, seed, profile, out, force):
    try:
        run = _open_run(config, seed, profile, out)
    except ConfigError as exc:
        raise click.ClickException(f"invalid config:\n{exc}") from exc
    lock = FileLock(str(Path(out) / ".lock"))
    try:
        with lock.acquire(timeout=0):
            for stage in stages:
                ran = run_stage(run, stage, force=force)
                click.echo(f"{stage}: {'done' if ran else 'up to date'}")
    except Timeout as exc:
        raise click.ClickException(f"another pipeline is running in {out}") from exc
    except StageMissingError as exc:
        raise click.ClickException(str(exc)) from exc
    return run


def _common(f):
    f = click.option("--force", is_flag=True, help="Rerun even if the manifest entry is current.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="run", show_default=True,
                     help="Output directory.")(f)
    f = click.option("--profile", type=click.Choice(["desk", "full"]), default=None,
                     help="Scale profile (default: from config, else desk).")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Run seed (overrides the config).")(f)
    f = click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="YAML config file.")(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True, help="-v info, -vv debug.")
def main(verbose):
    """Swing-intent pipeline: intention models, causal effects and run value."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _stage_command(name):
    @_common
    def cmd(config, seed, profile, out, force):
        _execute([name], config, seed, profile, out, force)

    cmd.__doc__ = f"Run the {name} stage."
    return main.command(name)(cmd)


for _name in PIPELINE:
    _stage_command(_name)


@main.command("all")
@_common
def run_all(config, seed, profile, out, force):
    """Run every stage in order (synth only when no input files are configured)."""
    try:
        cfg = load_config(config, seed=seed, profile=profile)
    except ConfigError as exc:
        raise click.ClickException(f"invalid config:\n{exc}") from exc
    synthetic = not (cfg["inputs"]["pitches"] and cfg["inputs"]["events"])
    stages = [s for s in PIPELINE if s != "synth" or synthetic]
    run = _execute(stages, config, seed, profile, out, force)
    summary = json.loads((run.out / "report" / "summary.json").read_text())["summary"]
    for key in ("recovery", "reference"):
        if f"{key}_total" in summary:
            click.echo(f"{key} checks: {summary[f'{key}_passed']}/{summary[f'{key}_total']} passed")


@main.command("hashes")
@click.option("--out", type=click.Path(file_okay=False, exists=True), default="run", show_default=True)
def hashes(out):
    """Print the content hash of every artifact in the manifest."""
    for name, digest in Manifest(Path(out)).artifact_hashes().items():
        click.echo(f"{digest}  {name}")


@main.command("schema")
def schema():
    """Print the JSON schema of the config file."""
    click.echo(json.dumps(SCHEMA, indent=2))


if __name__ == "__main__":
    main()
