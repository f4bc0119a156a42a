#!/usr/bin/env python3
"""
Evaluation commands: classification, retrieval and embedding export
"""

import click
from flask import Blueprint, current_app

from ..errors import EvaluationError
from ..services.data import load_dataset_stem
from ..services.evaluate import (
    evaluate_classification,
    export_embeddings,
    gzsl_retrieval_eval,
    write_report,
)
from ..services.model import load_checkpoint
from .common import config_option, settings_for

bp = Blueprint('evaluation', __name__, cli_group=None)


def _eval_options(f):
    f = config_option(f)
    f = click.option('--out', help='Write per-class metrics and the summary here')(f)
    f = click.option('--zsl', is_flag=True, help='Conventional ZSL: unseen queries against unseen classes only')(f)
    f = click.option('--split', type=click.Choice(['train', 'val', 'test']))(f)
    f = click.option('--modality', type=click.Choice(['audio', 'video', 'both']))(f)
    f = click.option('--data', required=True)(f)
    return click.option('--ckpt', required=True)(f)


def _load(ckpt, data, split, zsl):
    params = load_checkpoint(ckpt)
    dataset = load_dataset_stem(data)
    records = dataset.splits.get(split)
    candidates = None
    if zsl:
        candidates = dataset.manifest.unseen_ids
        if not candidates:
            raise EvaluationError('--zsl needs at least one unseen class')
        records = [r for r in records if not dataset.manifest.is_seen(r.class_id)]
    if not records:
        raise EvaluationError(f'split {split!r} has no records to evaluate')
    return params, dataset, records, candidates


def _finish(report, out):
    if out:
        write_report(report, out)
    click.echo(report.summary())


@bp.cli.command('eval-cls')
@_eval_options
def eval_cls(ckpt, data, modality, split, zsl, out, config_path):
    """GZSL classification: S, U and HM of mean class accuracy"""
    settings = settings_for(config_path, modality=modality, split=split)
    params, dataset, records, candidates = _load(ckpt, data, settings['split'], zsl)
    report = evaluate_classification(params, dataset.manifest, records, settings['modality'], candidates)
    _finish(report, out)


@bp.cli.command('eval-ret')
@_eval_options
def eval_ret(ckpt, data, modality, split, zsl, out, config_path):
    """GZSL retrieval: S, U and HM of mean average precision"""
    settings = settings_for(config_path, modality=modality, split=split)
    params, dataset, records, candidates = _load(ckpt, data, settings['split'], zsl)
    report = gzsl_retrieval_eval(params, dataset.manifest, records, settings['modality'], candidates)
    _finish(report, out)


@bp.cli.command('export-emb')
@click.option('--ckpt', required=True)
@click.option('--data', required=True)
@click.option('--split', type=click.Choice(['train', 'val', 'test']))
@click.option('--out', required=True)
@config_option
def export_emb(ckpt, data, split, out, config_path):
    """Dump audio/video embeddings of a split and text embeddings of every class"""
    settings = settings_for(config_path, split=split)
    params = load_checkpoint(ckpt)
    dataset = load_dataset_stem(data)
    rows = export_embeddings(params, dataset.splits.get(settings['split']), dataset.manifest, out)
    current_app.logger.info('Export finished', extra={'out': out, 'rows': rows})
    click.echo(f'rows={rows}')
