#!/usr/bin/env python3
"""
Reverse-mode gradients checked against central finite differences
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .losses import TERMS, LossConfig, PairBatch, total_loss, total_loss_value
from .model import ArchitectureSpec, ModelParams, init_params
from .tensor_core import DTYPE, LayerParams, backward, finite_diff_gradient, max_relative_error

logger = logging.getLogger(__name__)

# small enough that finite differences over every parameter stay cheap
CHECK_ARCH = ArchitectureSpec(dim_audio_in=12, dim_video_in=10, dim_text_in=6, embed_dim=4,
                              decoder_out_dim=6, hidden_audio=5, hidden_video=5, hidden_decoder=4)
CHECK_CLASSES = 4
EPSILON = 1e-5
TOLERANCE = 1e-4


def check_configs(margin: float = 1.0) -> List[Tuple[str, LossConfig]]:
    """Every single term on its own, then all terms together"""
    configs = [(term, LossConfig.only(term, margin=margin)) for term in TERMS]
    configs.append(('all', LossConfig(margin=margin)))
    return configs


@dataclass
class GradCheckResult:
    per_config: Dict[str, float] = field(default_factory=dict)
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.per_config.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> List[str]:
        out = [f'config={name} max_relative_error={error:.3e}' for name, error in self.per_config.items()]
        out.append(f'max_relative_error={self.max_error:.3e} {"PASS" if self.passed else "FAIL"}')
        return out


def random_batch(arch: ArchitectureSpec, n_pairs: int, rng: np.random.Generator,
                 n_classes: int = CHECK_CLASSES) -> PairBatch:
    """Gaussian features for pairs whose two classes always differ"""
    text = rng.standard_normal((n_classes, arch.dim_text_in))
    class_p = rng.integers(0, n_classes, size=n_pairs)
    class_q = (class_p + rng.integers(1, n_classes, size=n_pairs)) % n_classes
    return PairBatch(
        audio_p=rng.standard_normal((n_pairs, arch.dim_audio_in)),
        video_p=rng.standard_normal((n_pairs, arch.dim_video_in)),
        text_p=text[class_p], class_p=class_p,
        audio_q=rng.standard_normal((n_pairs, arch.dim_audio_in)),
        video_q=rng.standard_normal((n_pairs, arch.dim_video_in)),
        text_q=text[class_q], class_q=class_q,
    )


def random_params(arch: ArchitectureSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot weights with nonzero biases so bias gradients are exercised"""
    params = init_params(arch, int(rng.integers(0, 2 ** 31)))
    layers = [LayerParams(layer.weight, layer.bias + 0.1 * rng.standard_normal(layer.out_dim).astype(DTYPE))
              for layer in params.layers()]
    return ModelParams.from_layers(arch, layers)


def compare_gradients(batch: PairBatch, params: ModelParams, config: LossConfig,
                      epsilon: float = EPSILON) -> float:
    """Max relative error between backward and finite differences over all parameters"""
    scalar, _ = total_loss(batch, params, config)
    analytic = backward(scalar, wrt=params.layers())
    numeric = finite_diff_gradient(
        lambda layers: total_loss_value(batch, ModelParams.from_layers(params.arch, layers), config),
        params.layers(), epsilon)
    return max_relative_error([analytic[layer] for layer in params.layers()], numeric)


def check_gradients(seed: int = 0, n_batches: int = 10, n_pairs: int = 8,
                    arch: ArchitectureSpec = CHECK_ARCH, margin: float = 1.0,
                    epsilon: float = EPSILON, tolerance: float = TOLERANCE,
                    configs: Optional[Sequence[Tuple[str, LossConfig]]] = None) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    result = GradCheckResult(tolerance=tolerance)
    for name, config in (configs if configs is not None else check_configs(margin)):
        worst = 0.0
        for _ in range(n_batches):
            batch = random_batch(arch, n_pairs, rng)
            params = random_params(arch, rng)
            worst = max(worst, compare_gradients(batch, params, config, epsilon))
        result.per_config[name] = worst
        logger.info('Gradient check', extra={'config': name, 'max_relative_error': worst})
    return result
