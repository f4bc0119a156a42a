#!/usr/bin/env python3
"""
Options and helpers shared by the command blueprints
"""

import functools

import click
from flask import current_app

from ..services.data import Dataset
from ..services.losses import LossConfig, TERMS
from ..services.model import ArchitectureSpec
from ..services.trainer import OPTIMIZERS, TrainConfig
from ..settings import log_level, resolve_settings


def config_option(f):
    return click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                        help='key=value settings file; flags override it')(f)


def training_options(f):
    """Flags of every command that trains a model"""
    options = [
        click.option('--data', required=True, help='Dataset stem (<stem>.avzm, <stem>.train.avzf, ...)'),
        click.option('--seed', type=int),
        click.option('--epochs', type=int),
        click.option('--batch-size', type=int),
        click.option('--steps-per-epoch', type=int),
        click.option('--lr', 'learning_rate', type=float),
        click.option('--optimizer', type=click.Choice(OPTIMIZERS)),
        click.option('--margin', type=float),
        click.option('--drop', multiple=True, type=click.Choice(TERMS), help='Disable a loss term (repeatable)'),
        click.option('--baseline', type=click.Choice(['full', 'audio-only', 'video-only'])),
        click.option('--holdout-classes', type=int, help='Validate on this many seen classes kept out of training'),
        click.option('--embed-dim', type=int),
        click.option('--hidden-audio', type=int),
        click.option('--hidden-video', type=int),
        click.option('--hidden-decoder', type=int),
        config_option,
    ]
    return functools.reduce(lambda acc, option: option(acc), reversed(options), f)


def settings_for(config_path, **flags):
    """Resolve flags > config file > defaults and keep the result on app.config"""
    settings = resolve_settings(flags, config_path)
    current_app.config.update({key.upper(): value for key, value in settings.items()})
    current_app.logger.setLevel(log_level(current_app.config.get('LOG', settings['log_level'])))
    return settings


def train_config(settings, drop=()) -> TrainConfig:
    loss = LossConfig.preset(settings['baseline'], margin=settings['margin']).without(*drop)
    return TrainConfig(
        epochs=settings['epochs'],
        batch_size=settings['batch_size'],
        steps_per_epoch=settings['steps_per_epoch'],
        learning_rate=settings['learning_rate'],
        optimizer=settings['optimizer'],
        seed=settings['seed'],
        loss=loss,
        checkpoint_every=settings['checkpoint_every'],
        holdout_classes=settings['holdout_classes'],
    )


def architecture(dataset: Dataset, settings) -> ArchitectureSpec:
    dim_audio, dim_video, dim_text = dataset.dims
    return ArchitectureSpec.for_features(
        dim_audio, dim_video, dim_text,
        embed_dim=settings['embed_dim'],
        hidden_audio=settings['hidden_audio'],
        hidden_video=settings['hidden_video'],
        hidden_decoder=settings['hidden_decoder'],
    )
