"""Command line entry point: ``neurosplit simulate|reference|compare``."""

from __future__ import annotations

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .harness import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    get_reference,
    load_config,
    preset,
    relative_l2_error,
    run_experiment,
)
from .net import DivergenceError
from .trajectory import read_csv

EXIT_CONFIG = 1
EXIT_DIVERGED = 2


def _resolve(target: str, scale: str) -> ExperimentConfig:
    if target in PRESETS:
        return preset(target, scale)
    if Path(target).is_file():
        return load_config(target)
    raise ConfigError(f"{target!r} is neither a preset ({', '.join(PRESETS)}) nor a config file")


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Splitting-PINN neuron model experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("target")
@click.option("--scale", type=click.Choice(["desk", "paper"]), default="desk", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="First seed.")
@click.option("--seeds", type=int, default=None, help="Number of seeds [default: from config, 5 for presets].")
@click.option("--out", type=click.Path(file_okay=False), default="runs", show_default=True)
@click.option("--resume", is_flag=True, help="Reuse finished seeds with a matching config hash.")
@click.option("--no-plots", is_flag=True, help="Skip SVG output.")
def simulate(target, scale, seed, seeds, out, resume, no_plots) -> None:
    """Run a preset or JSON config file and report relative L2 errors."""
    try:
        cfg = _resolve(target, scale)
        if seeds is not None and seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        if seeds is not None or seed != 0:
            count = len(cfg.seeds) if seeds is None else seeds
            cfg = replace(cfg, seeds=tuple(range(seed, seed + count)))
        report = run_experiment(cfg, out=out, resume=resume, plots=not no_plots)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DivergenceError as exc:
        _fail(EXIT_DIVERGED, f"{cfg.name}: solver diverged: {exc}")
    click.echo(f"{report.name}: relative L2 error over {len(report.seeds)} seed(s)")
    click.echo(f"{'var':>6} {'train':>12} {'std':>10} {'test':>12} {'std':>10}")
    for name, tr, trs, te, tes in report.rows():
        click.echo(f"{name:>6} {tr:12.4e} {trs:10.2e} {te:12.4e} {tes:10.2e}")
    click.echo(f"outputs in {report.outputs.get('dir', out)}")


@main.command()
@click.argument("target")
@click.option("--scale", type=click.Choice(["desk", "paper"]), default="desk", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="runs", show_default=True)
def reference(target, scale, out) -> None:
    """Compute (or fetch from cache) the reference solution of a preset."""
    try:
        cfg = _resolve(target, scale)
        ref = get_reference(cfg, Path(out) / "reference-cache")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (FloatingPointError, RuntimeError) as exc:
        _fail(EXIT_DIVERGED, f"reference solver failed: {exc}")
    state = "cached" if ref.from_cache else "computed"
    click.echo(f"{state} {ref.kind} reference: {ref.path}")


@main.command()
@click.argument("trajectory", type=click.Path(exists=True, dir_okay=False))
@click.argument("ref", type=click.Path(exists=True, dir_okay=False))
def compare(trajectory, ref) -> None:
    """Relative L2 error of TRAJECTORY against REF (resampled linearly)."""
    try:
        a = read_csv(trajectory)
        e = read_csv(ref)
        if a.names != e.names:
            raise ConfigError(f"column mismatch: {a.names} vs {e.names}")
    except (ConfigError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    exact = e.interp(a.times)
    for k, name in enumerate(a.names):
        click.echo(f"{name}: {relative_l2_error(exact[:, k], a.states[:, k]):.6e}")


if __name__ == "__main__":
    main()
