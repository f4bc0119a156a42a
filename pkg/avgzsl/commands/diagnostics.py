#!/usr/bin/env python3
"""
Gradient check command
"""

import click
from flask import Blueprint

from ..services.gradcheck import EPSILON, TOLERANCE, check_gradients
from .common import config_option, settings_for

GRADCHECK_FAILED = 7

bp = Blueprint('diagnostics', __name__, cli_group=None)


@bp.cli.command('grad-check')
@click.option('--seed', type=int)
@click.option('--margin', type=float)
@click.option('--batches', type=int, default=10, show_default=True)
@click.option('--pairs', type=int, default=8, show_default=True)
@click.option('--eps', type=float, default=EPSILON, show_default=True)
@click.option('--tolerance', type=float, default=TOLERANCE, show_default=True)
@config_option
def grad_check(seed, margin, batches, pairs, eps, tolerance, config_path):
    """Compare backward against finite differences for each loss term and for all of them"""
    settings = settings_for(config_path, seed=seed, margin=margin)
    result = check_gradients(seed=settings['seed'], n_batches=batches, n_pairs=pairs,
                             margin=settings['margin'], epsilon=eps, tolerance=tolerance)
    for line in result.lines():
        click.echo(line)
    return 0 if result.passed else GRADCHECK_FAILED
