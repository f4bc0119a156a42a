#!/usr/bin/env python3
"""
AVGZSL lab package
"""

from .services.data import gen_synthetic, load_dataset, load_dataset_stem, save_dataset
from .services.evaluate import evaluate_classification, gzsl_retrieval_eval
from .services.losses import LossConfig, total_loss
from .services.model import ArchitectureSpec, init_params, load_checkpoint, save_checkpoint
from .services.trainer import TrainConfig, train

__all__ = [
    'gen_synthetic',
    'load_dataset',
    'load_dataset_stem',
    'save_dataset',
    'evaluate_classification',
    'gzsl_retrieval_eval',
    'LossConfig',
    'total_loss',
    'ArchitectureSpec',
    'init_params',
    'load_checkpoint',
    'save_checkpoint',
    'TrainConfig',
    'train'
]
