#!/usr/bin/env python3
"""
Training and ablation commands
"""

import click
from flask import Blueprint, current_app

from ..services.ablation import ablate, format_table
from ..services.data import load_dataset_stem
from ..services.model import save_checkpoint
from ..services.trainer import train
from ..utils import atomic_write
from .common import architecture, settings_for, train_config, training_options

bp = Blueprint('training', __name__, cli_group=None)


@bp.cli.command('train')
@training_options
@click.option('--ckpt', required=True, help='Checkpoint to write; the training log goes to <ckpt>.log')
@click.option('--checkpoint-every', type=int)
def train_command(data, ckpt, config_path, drop, **flags):
    """Train on the seen-class train split"""
    settings = settings_for(config_path, **flags)
    dataset = load_dataset_stem(data)
    config = train_config(settings, drop)
    params, log = train(dataset, architecture(dataset, settings), config, checkpoint_path=ckpt)
    save_checkpoint(params, ckpt)
    log.write(f'{ckpt}.log')
    last = log.steps[-1].report
    current_app.logger.info('Training finished', extra={'ckpt': ckpt, 'steps': len(log.steps)})
    click.echo(f'steps={len(log.steps)} total={last.total:.6f}')


@bp.cli.command('ablate')
@training_options
@click.option('--modality', type=click.Choice(['audio', 'video', 'both']))
@click.option('--split', type=click.Choice(['val', 'test']))
@click.option('--out', help='Also write the table to this file')
def ablate_command(data, config_path, drop, out, **flags):
    """Train the full objective and one model per dropped term; print S/U/HM per run"""
    settings = settings_for(config_path, **flags)
    dataset = load_dataset_stem(data)
    config = train_config(settings, drop)
    rows = ablate(dataset, architecture(dataset, settings), config, settings['modality'], settings['split'])
    table = format_table(rows)
    if out:
        with atomic_write(out, 'w') as fh:
            fh.write(table)
    click.echo(table, nl=False)
