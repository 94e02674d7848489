#!/usr/bin/env python3
"""
emabench - Entry Point

Weight-averaging experiments (EMA bank, SWA, BN recompute) on desk-scale
synthetic tasks, with reproducible run directories and CSV reports.

Usage:
    python -m src.main train --config base --seed 1
    python -m src.main ablate bn_policy --config base
    python -m src.main report runs/base
    python -m src.main --help
"""
import logging
import functools
from pathlib import Path
from typing import List, Tuple

import click
from rich.console import Console

from . import __version__
from .constants import EXIT_CONFIG, EXIT_ERROR, EXIT_INPUT, LOG_FILENAME
from .exceptions import ConfigError, EmaBenchError, InputError

logger = logging.getLogger(__name__)


def parse_seeds(values: Tuple[str, ...]) -> List[int]:
    """``--seed 1``, ``--seed 0,1,2`` or repeated ``--seed``"""
    seeds = []
    for value in values:
        for part in value.split(','):
            part = part.strip()
            if not part:
                continue
            try:
                seeds.append(int(part))
            except ValueError:
                raise ConfigError(f"seed must be an integer, got {part!r}", "experiment.seeds")
    return seeds


def load_config(config_name: str, seeds: Tuple[str, ...], out: str, overrides: Tuple[str, ...],
                ema_decays: str = None):
    """Bundled or file config with CLI flags folded in as overrides"""
    from .utils.config import Config

    extra = list(overrides)
    if seeds:
        extra.append(f"experiment.seeds={parse_seeds(seeds)}")
    if ema_decays is not None:
        try:
            decays = [float(d) for d in ema_decays.split(',') if d.strip()]
        except ValueError:
            raise ConfigError(f"decays must be numbers, got {ema_decays!r}", "ema.decays")
        extra.append(f"ema.decays={decays}")
    config = Config.from_name(config_name, extra)
    if out:
        config.set('experiment', 'out_dir', out)
    config.validate()
    return config


def setup(ctx: click.Context, config=None) -> Console:
    """Configure logging once the experiment directory is known"""
    from .utils.logging_config import setup_logging

    level = "DEBUG" if ctx.obj['debug'] else "INFO" if ctx.obj['verbose'] else "WARNING"
    log_file = None
    if config is not None:
        log_file = Path(config.experiment.out_dir) / config.experiment.name / LOG_FILENAME
    setup_logging(log_level=level, log_file=str(log_file) if log_file else None)
    return Console()


def guarded(fn):
    """Map the error hierarchy onto exit codes"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            status = fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"Config error: {e}", err=True)
            ctx.exit(EXIT_CONFIG)
        except InputError as e:
            click.echo(f"Input error: {e}", err=True)
            ctx.exit(EXIT_INPUT)
        except EmaBenchError as e:
            logger.error(str(e))
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_ERROR)
        ctx.exit(status or 0)
    return wrapper


def common_options(fn):
    fn = click.option('--config', '-c', 'config_name', default='base', show_default=True,
                      help='Config file path or bundled config name')(fn)
    fn = click.option('--seed', '-s', 'seeds', multiple=True,
                      help='Master seed(s): an integer or a comma-separated list')(fn)
    fn = click.option('--out', '-o', default=None, help='Output root directory')(fn)
    fn = click.option('--override', 'overrides', multiple=True, metavar='SECTION.KEY=VALUE',
                      help='Override one config value (repeatable)')(fn)
    return fn


@click.group()
@click.option('--verbose', is_flag=True, default=False, help='Log progress (INFO)')
@click.option('--debug', is_flag=True, default=False, help='Enable debug logging')
@click.version_option(__version__, '--version', '-V', prog_name='emabench')
@click.pass_context
def main(ctx: click.Context, verbose: bool, debug: bool):
    """emabench - EMA and SWA weight averaging experiments

    Trains small batch-normalized MLPs with Nesterov SGD while a bank of
    exponential moving averages (and SWA) rides along, then compares the
    averaged models against the SGD iterate.

    Examples:

        emabench train --config base --seed 0,1,2
        emabench train --config smoke --ema-decays 0
        emabench ablate constant_lr --config noise
        emabench report runs/base
    """
    ctx.ensure_object(dict)
    ctx.obj['verbose'] = verbose
    ctx.obj['debug'] = debug


@main.command()
@common_options
@click.option('--ema-decays', default=None, help='Comma-separated EMA decays (replaces ema.decays)')
@click.option('--final-fit', is_flag=True, default=False,
              help='Retrain on the full training pool and snapshot the EMA at each verdict')
@click.pass_context
@guarded
def train(ctx, config_name, seeds, out, overrides, ema_decays, final_fit):
    """Train every seed and write records, checkpoints and predictions"""
    from .commands import run_train

    config = load_config(config_name, seeds, out, overrides, ema_decays)
    return run_train(config, setup(ctx, config), with_final_fit=final_fit)


@main.command()
@click.argument('kind', type=click.Choice(['bootstrap', 'constant_lr', 'bn_policy', 'lr_sweep']))
@common_options
@click.pass_context
@guarded
def ablate(ctx, kind, config_name, seeds, out, overrides):
    """Run a paired ablation and write its comparison tables"""
    from .commands import run_ablate

    config = load_config(config_name, seeds, out, overrides)
    return run_ablate(kind, config, setup(ctx, config))


@main.command()
@click.argument('experiment_dir', type=click.Path(file_okay=False))
@click.pass_context
@guarded
def report(ctx, experiment_dir):
    """Consolidate an experiment directory into CSV tables"""
    from .commands import run_report

    return run_report(experiment_dir, setup(ctx))


@main.command('linear-eval')
@common_options
@click.option('--checkpoint', type=click.Path(dir_okay=False, exists=True), default=None,
              help='Evaluate this checkpoint instead of the experiment backbones')
@click.pass_context
@guarded
def linear_eval(ctx, config_name, seeds, out, overrides, checkpoint):
    """Train linear heads on frozen backbones for the transfer target"""
    from .commands import run_linear_eval

    config = load_config(config_name, seeds, out, overrides)
    return run_linear_eval(config, setup(ctx, config), checkpoint)


@main.command()
@common_options
@click.pass_context
@guarded
def churn(ctx, config_name, seeds, out, overrides):
    """Pairwise prediction churn and JS divergence across seeds"""
    from .commands import run_churn

    config = load_config(config_name, seeds, out, overrides)
    return run_churn(config, setup(ctx, config))


if __name__ == "__main__":
    main()
