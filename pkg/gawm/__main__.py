#!/usr/bin/env python3

import logging
import sys

import click

from gawm.configuration import Configuration
from gawm.evaluator import Evaluator
from gawm.exceptions import CheckpointError, ConfigurationError, InputError
from gawm.metrics import MetricAnalyser
from gawm.plot_export import PlotExporter
from gawm.replayer import Replayer
from gawm.trainer import GAWMTrainer

logger = logging.getLogger()

_common_options = [
    click.option('--config', type=str, default=None),
    click.option('--log', type=str, default=None),
    click.option('--output', type=str, default=None, envvar='GAWM_OUT'),
    click.option('--seed', type=int, default=None),
    click.option('--set', 'set', multiple=True, default=None, type=str),
    click.option('-v', '--verbose', default=None, count=True),
]

_checkpoint_options = [
    click.option('-c', '--checkpoint', multiple=True, default=None, type=str),
]

_metric_options = [
    click.option('--count', type=click.IntRange(min=1), default=None),
    click.option('--segment-len', type=click.IntRange(min=1), default=None),
    click.option('--epsilon-r', type=float, default=None),
    click.option('--epsilon-gamma', type=float, default=None),
    click.option('--oracle', is_flag=True, default=None),
    click.option('--trajectory-log', type=str, default=None),
    click.option('--variant', multiple=True, default=None, type=str),
    click.option('-f', '--format', type=click.Choice(('xml', 'json', 'yaml')), default=None),
]

EXIT_CODES = (
    (ConfigurationError, 2),
    (InputError, 2),
    (CheckpointError, 3),
)


def _add_options(opts: list):
    def wrap(func):
        for opt in opts:
            func = opt(func)
        return func

    return wrap


def _run_command(context: click.Context, connector_type, description: str, **kwargs):
    config = Configuration()
    config.process_click_arguments(context)
    setup_logging(config.verbose)
    try:
        connector = connector_type(config, **kwargs)
        connector.run()
    except Exception as e:
        for error_type, code in EXIT_CODES:
            if isinstance(e, error_type):
                logger.error(f'{description} failed: {e}')
                context.exit(code)
        logger.exception(f'{description} exited unexpectedly')
        raise
    else:
        logger.info('Program complete')


@click.group()
def cli():
    pass


@cli.command('train')
@_add_options(_common_options)
@click.pass_context
def cli_train(context: click.Context, **_):
    _run_command(context, GAWMTrainer, 'Trainer')


@cli.command('eval')
@_add_options(_common_options)
@_add_options(_checkpoint_options)
@click.option('--episodes', type=click.IntRange(min=1), default=None)
@click.option('--policy', type=click.Choice(('greedy', 'random')), default=None)
@click.pass_context
def cli_eval(context: click.Context, **_):
    _run_command(context, Evaluator, 'Evaluator')


@cli.command('gci')
@_add_options(_common_options)
@_add_options(_checkpoint_options)
@_add_options(_metric_options)
@click.pass_context
def cli_gci(context: click.Context, **_):
    _run_command(context, MetricAnalyser, 'Metric analysis', headline='gci')


@cli.command('gpe')
@_add_options(_common_options)
@_add_options(_checkpoint_options)
@_add_options(_metric_options)
@click.pass_context
def cli_gpe(context: click.Context, **_):
    _run_command(context, MetricAnalyser, 'Metric analysis', headline='gpe')


@cli.command('export-plots')
@_add_options(_common_options)
@click.argument('metrics_file', nargs=-1, type=str)
@click.pass_context
def cli_export_plots(context: click.Context, **_):
    _run_command(context, PlotExporter, 'Plot export')


@cli.command('replay')
@_add_options(_common_options)
@click.argument('input_log', type=str)
@click.pass_context
def cli_replay(context: click.Context, **_):
    _run_command(context, Replayer, 'Replay')


def setup_logging(verbosity: int):
    class StreamExceptionFilter(logging.Filter):
        def filter(self, record: logging.LogRecord) -> bool:
            result = not (record.levelno == logging.ERROR and record.exc_info)
            return result

    logger.setLevel(1)
    stream = logging.StreamHandler(sys.stdout)
    stream.addFilter(StreamExceptionFilter())

    formatter = logging.Formatter('[%(asctime)s - %(name)s - %(levelname)s] - %(message)s')
    stream.setFormatter(formatter)

    logger.addHandler(stream)
    if verbosity <= 0:
        stream.setLevel(logging.INFO)
    elif verbosity == 1:
        stream.setLevel(logging.DEBUG)
    else:
        stream.setLevel(9)


if __name__ == '__main__':
    cli()
