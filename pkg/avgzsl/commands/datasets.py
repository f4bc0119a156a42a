#!/usr/bin/env python3
"""
Dataset commands
"""

import click
from flask import Blueprint

from ..services.data import gen_synthetic, save_dataset
from .common import config_option, settings_for

bp = Blueprint('datasets', __name__, cli_group=None)


@bp.cli.command('gen-data')
@click.option('--out', required=True, help='Output stem')
@click.option('--seen', type=int)
@click.option('--unseen', type=int)
@click.option('--per-class', type=int)
@click.option('--noise', type=float)
@click.option('--dim-audio', type=int)
@click.option('--dim-video', type=int)
@click.option('--dim-text', type=int)
@click.option('--seed', type=int)
@config_option
def gen_data(out, config_path, **flags):
    """Write a synthetic dataset to <out>.avzm and <out>.{train,val,test}.avzf"""
    settings = settings_for(config_path, **flags)
    dataset = gen_synthetic(settings['seen'], settings['unseen'], settings['per_class'],
                            dims=(settings['dim_audio'], settings['dim_video'], settings['dim_text']),
                            noise_sigma=settings['noise'], seed=settings['seed'])
    paths = save_dataset(dataset, out)
    for path in paths.values():
        click.echo(path)
