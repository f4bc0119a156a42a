#!/usr/bin/env python3
"""
Training loop minimizing L = L_CMD + L_CT over seen-class pairs
"""

import contextlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import ConfigError, NonFiniteError, ShapeError
from ..utils import atomic_write, format_real
from .data import ClassManifest, Dataset, FeatureRecord, PairSampler
from .evaluate import EvalReport, ModalityCondition, evaluate_classification
from .losses import LossConfig, LossReport, loss_report, total_loss
from .model import ArchitectureSpec, ModelParams, init_params, save_checkpoint
from .tensor_core import LayerParams, backward

logger = logging.getLogger(__name__)

OPTIMIZERS = ('plain-sgd', 'momentum-sgd', 'adaptive-moment')
MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    steps_per_epoch: int = 0  # 0 = ceil(n_train / batch_size)
    learning_rate: float = 1e-3
    optimizer: str = 'adaptive-moment'
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 0  # epochs; 0 = off
    holdout_classes: int = 0  # seen classes kept out of training and validated as unseen
    validate: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f'epochs must be >= 1, got {self.epochs}')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.steps_per_epoch < 0:
            raise ConfigError(f'steps_per_epoch must be >= 0, got {self.steps_per_epoch}')
        # 0 is allowed: a frozen run that leaves the initial params untouched
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f'learning_rate must be finite and >= 0, got {self.learning_rate}')
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f'unknown optimizer {self.optimizer!r}; expected one of {", ".join(OPTIMIZERS)}')
        if self.checkpoint_every < 0:
            raise ConfigError(f'checkpoint_every must be >= 0, got {self.checkpoint_every}')
        if self.holdout_classes < 0:
            raise ConfigError(f'holdout_classes must be >= 0, got {self.holdout_classes}')

    def steps_for(self, n_train: int) -> int:
        return self.steps_per_epoch or max(1, math.ceil(n_train / self.batch_size))


@dataclass
class OptimizerState:
    step: int = 0
    # keyed by (layer slot, 0 = weight | 1 = bias)
    first: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    second: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class StepRecord:
    step: int
    report: LossReport


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    last_step: int
    report: Optional[LossReport]
    validation: Optional[EvalReport]


@dataclass
class TrainLog:
    steps: List[StepRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)

    def lines(self) -> List[str]:
        """One line per step, epoch lines after the last step of their epoch"""
        out = []
        steps = iter(self.steps)
        for epoch in self.epochs:
            for record in steps:
                out.append(format_step(record))
                if record.step == epoch.last_step:
                    break
            out.append(format_epoch(epoch))
        out.extend(format_step(record) for record in steps)
        return out

    def write(self, path) -> None:
        with atomic_write(path, 'w') as fh:
            fh.write('\n'.join(self.lines()) + '\n')


def _report_fields(report: LossReport, prefix: str = '') -> str:
    return ' '.join(f'{prefix}{name}={format_real(value)}' for name, value in report.items())


def format_step(record: StepRecord) -> str:
    return f'step={record.step} {_report_fields(record.report)}'


def format_epoch(record: 'EpochRecord') -> str:
    parts = [f'epoch={record.epoch}']
    if record.report is not None:
        parts.append(_report_fields(record.report, 'val_'))
    if record.validation is not None:
        v = record.validation
        parts.append(f'val_S={format_real(v.seen)} val_U={format_real(v.unseen)} val_HM={format_real(v.hm)}')
    return ' '.join(parts)


def optimizer_step(params: ModelParams, grads: Dict[LayerParams, LayerParams], state: OptimizerState,
                   config: TrainConfig) -> Tuple[ModelParams, OptimizerState]:
    """One first-order update; returns new params and state, inputs are left alone"""
    lr = config.learning_rate
    t = state.step + 1
    first = dict(state.first)
    second = dict(state.second)
    new_layers = []
    for slot, layer in enumerate(params.layers()):
        grad = grads.get(layer)
        if grad is None:
            grad = LayerParams.zeros(layer.out_dim, layer.in_dim)
        if grad.weight.shape != layer.weight.shape or grad.bias.shape != layer.bias.shape:
            raise ShapeError(f'gradient of layer {slot}', layer.weight.shape, grad.weight.shape)
        updated = []
        for k, (p, g) in enumerate(zip(layer.arrays(), grad.arrays())):
            if config.optimizer == 'plain-sgd':
                updated.append(p - lr * g)
            elif config.optimizer == 'momentum-sgd':
                velocity = MOMENTUM * _moment(first, (slot, k), p) + g
                first[slot, k] = velocity
                updated.append(p - lr * velocity)
            else:
                m = ADAM_BETA1 * _moment(first, (slot, k), p) + (1.0 - ADAM_BETA1) * g
                v = ADAM_BETA2 * _moment(second, (slot, k), p) + (1.0 - ADAM_BETA2) * g * g
                first[slot, k] = m
                second[slot, k] = v
                m_hat = m / (1.0 - ADAM_BETA1 ** t)
                v_hat = v / (1.0 - ADAM_BETA2 ** t)
                updated.append(p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        new_layers.append(LayerParams(*updated))
    return ModelParams.from_layers(params.arch, new_layers), OptimizerState(t, first, second)


def _moment(table, key, like):
    entry = table.get(key)
    return entry if entry is not None else np.zeros_like(like)


def _check_report(report: LossReport, step: int):
    for name, value in report.items():
        if not math.isfinite(value):
            raise NonFiniteError(f'loss term {name} became non-finite at step {step}', step=step, term=name)


def holdout_split(dataset: Dataset, n_classes: int) -> Tuple[List[FeatureRecord], ClassManifest, List[FeatureRecord]]:
    """Keep the last `n_classes` seen classes out of training.

    Returns the training records, a manifest that marks the held-out classes
    unseen, and the validation records (validation split plus the held-out
    classes' training records).
    """
    manifest = dataset.manifest
    if n_classes == 0:
        return dataset.splits.train, manifest, dataset.splits.validation
    seen = manifest.seen_ids
    if n_classes >= len(seen) - 1:
        raise ConfigError(f'holdout_classes={n_classes} leaves fewer than 2 seen classes to train on')
    held = set(seen[-n_classes:])
    view = ClassManifest([replace(info, seen=False) if info.id in held else info for info in manifest.classes])
    train_records = [r for r in dataset.splits.train if r.class_id not in held]
    val_records = dataset.splits.validation + [r for r in dataset.splits.train if r.class_id in held]
    return train_records, view, val_records


def _validate(params: ModelParams, manifest: ClassManifest, records: List[FeatureRecord],
              config: TrainConfig, epoch: int):
    """Validation LossReport on fixed pairs plus classification over all classes"""
    if not records:
        return None, None
    report = None
    if len({r.class_id for r in records}) >= 2:
        rng = np.random.default_rng([config.seed, 1, epoch])
        batch = PairSampler(records, manifest).sample(max(len(records), config.batch_size), rng)
        report = loss_report(batch, params, config.loss)
    evaluation = evaluate_classification(params, manifest, records, ModalityCondition.BOTH)
    return report, evaluation


def _epoch_checkpoint_path(checkpoint_path, epoch: int) -> str:
    stem, ext = os.path.splitext(os.fspath(checkpoint_path))
    return f'{stem}.epoch{epoch}{ext or ".avzc"}'


def train(dataset: Dataset, arch: ArchitectureSpec, config: TrainConfig,
          checkpoint_path=None) -> Tuple[ModelParams, TrainLog]:
    """Run epochs x steps_per_epoch optimizer steps on sampled pair batches.

    Deterministic for a given (dataset, arch, config): initial weights and the
    pair sequence both derive from config.seed. Epoch checkpoints written by a
    run that later diverges are removed before the error propagates.
    """
    train_records, val_manifest, val_records = holdout_split(dataset, config.holdout_classes)
    sampler = PairSampler(train_records, dataset.manifest)
    init_seed, sample_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(arch, init_seed)
    rng = np.random.default_rng(sample_seed)
    state = OptimizerState()
    log = TrainLog()
    steps_per_epoch = config.steps_for(len(train_records))
    logger.info('Training started', extra={
        'epochs': config.epochs, 'steps_per_epoch': steps_per_epoch, 'batch_size': config.batch_size,
        'optimizer': config.optimizer, 'terms': list(config.loss.enabled_terms()), 'seed': config.seed,
        'holdout_classes': config.holdout_classes,
    })

    written = []
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            for _ in range(steps_per_epoch):
                step += 1
                batch = sampler.sample(config.batch_size, rng)
                try:
                    scalar, report = total_loss(batch, params, config.loss)
                except NonFiniteError as exc:
                    raise NonFiniteError(f'training diverged at step {step}: {exc}', step=step) from exc
                _check_report(report, step)
                grads = backward(scalar, wrt=params.layers())
                params, state = optimizer_step(params, grads, state, config)
                log.steps.append(StepRecord(step, report))
                logger.debug('Step', extra={'step': step, 'total': report.total})

            if config.validate:
                val_report, val_eval = _validate(params, val_manifest, val_records, config, epoch)
            else:
                val_report, val_eval = None, None
            log.epochs.append(EpochRecord(epoch, step, val_report, val_eval))
            logger.info('Epoch finished', extra={
                'epoch': epoch, 'step': step, 'train_total': log.steps[-1].report.total,
                'val_hm': val_eval.hm if val_eval is not None else None,
            })
            if checkpoint_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                path = _epoch_checkpoint_path(checkpoint_path, epoch)
                save_checkpoint(params, path)
                written.append(path)
    except NonFiniteError:
        for path in written:
            with contextlib.suppress(FileNotFoundError):
                os.remove(path)
        if written:
            logger.warning('Removed epoch checkpoints of a diverged run', extra={'paths': written})
        raise

    return params, log
