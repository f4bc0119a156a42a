#!/usr/bin/env python3
"""
Projection networks F_A, F_V, F_T, the shared decoder F_DEC, and checkpoints
"""

import logging
import math
import os
import struct
from dataclasses import dataclass, fields
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import (
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ShapeError,
)
from ..utils import atomic_write
from .tensor_core import DTYPE, LayerParams, affine_forward, relu_forward, value_of

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'AVZC'
CHECKPOINT_VERSION = 1
LAYER_ORDER = ('f_a1', 'f_a2', 'f_v1', 'f_v2', 'f_t1', 'f_dec1', 'f_dec2')

# decoder_out_dim is not stored: it always equals dim_text_in
_HEADER_DIMS = ('dim_audio_in', 'dim_video_in', 'dim_text_in', 'embed_dim',
                'hidden_audio', 'hidden_video', 'hidden_decoder')
_HEADER = struct.Struct('<4sI7I')


@dataclass(frozen=True)
class ArchitectureSpec:
    dim_audio_in: int = 1024
    dim_video_in: int = 1024
    dim_text_in: int = 300
    embed_dim: int = 64
    decoder_out_dim: int = 300
    hidden_audio: int = 512
    hidden_video: int = 512
    hidden_decoder: int = 128

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ShapeError(f'architecture {f.name}', '>= 1', value)
        if self.decoder_out_dim != self.dim_text_in:
            raise ShapeError('decoder_out_dim (must equal dim_text_in)', self.dim_text_in, self.decoder_out_dim)

    @classmethod
    def for_features(cls, dim_audio: int, dim_video: int, dim_text: int, **hidden) -> 'ArchitectureSpec':
        """Architecture sized to a dataset's feature dims"""
        return cls(dim_audio_in=dim_audio, dim_video_in=dim_video, dim_text_in=dim_text,
                   decoder_out_dim=dim_text, **hidden)

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out_dim, in_dim) per layer, in LAYER_ORDER"""
        return [
            (self.hidden_audio, self.dim_audio_in),
            (self.embed_dim, self.hidden_audio),
            (self.hidden_video, self.dim_video_in),
            (self.embed_dim, self.hidden_video),
            (self.embed_dim, self.dim_text_in),
            (self.hidden_decoder, self.embed_dim),
            (self.decoder_out_dim, self.hidden_decoder),
        ]


@dataclass(eq=False)
class ModelParams:
    """Weights of the four networks. F_DEC is one parameter set shared by every modality."""
    f_a: Tuple[LayerParams, LayerParams]
    f_v: Tuple[LayerParams, LayerParams]
    f_t: LayerParams
    f_dec: Tuple[LayerParams, LayerParams]
    arch: ArchitectureSpec

    def __post_init__(self):
        self.f_a = tuple(self.f_a)
        self.f_v = tuple(self.f_v)
        self.f_dec = tuple(self.f_dec)
        if len(self.f_a) != 2 or len(self.f_v) != 2 or len(self.f_dec) != 2:
            raise ShapeError('layer count of F_A/F_V/F_DEC', 2, (len(self.f_a), len(self.f_v), len(self.f_dec)))
        for name, layer, shape in zip(LAYER_ORDER, self.layers(), self.arch.layer_shapes()):
            if layer.weight.shape != shape:
                raise ShapeError(f'{name} weight shape', shape, layer.weight.shape)

    def layers(self) -> List[LayerParams]:
        return [self.f_a[0], self.f_a[1], self.f_v[0], self.f_v[1], self.f_t, self.f_dec[0], self.f_dec[1]]

    def named_layers(self):
        return list(zip(LAYER_ORDER, self.layers()))

    @classmethod
    def from_layers(cls, arch: ArchitectureSpec, layers: Sequence[LayerParams]) -> 'ModelParams':
        if len(layers) != len(LAYER_ORDER):
            raise ShapeError('layer count', len(LAYER_ORDER), len(layers))
        a1, a2, v1, v2, t1, d1, d2 = layers
        return cls(f_a=(a1, a2), f_v=(v1, v2), f_t=t1, f_dec=(d1, d2), arch=arch)

    def copy(self) -> 'ModelParams':
        return ModelParams.from_layers(self.arch, [layer.copy() for layer in self.layers()])

    def same_values(self, other: 'ModelParams') -> bool:
        return self.arch == other.arch and all(
            a.same_values(b) for a, b in zip(self.layers(), other.layers()))

    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers())


def _check_input(x, expected: int, what: str):
    shape = np.shape(value_of(x))
    if len(shape) not in (1, 2) or shape[-1] != expected:
        raise ShapeError(f'{what} length', expected, shape[-1] if shape else shape)


def _two_layer(layers, x):
    return affine_forward(layers[1], relu_forward(affine_forward(layers[0], x)))


def embed_audio(params: ModelParams, x_a):
    """F_A: audio features -> embedding"""
    _check_input(x_a, params.arch.dim_audio_in, 'audio features')
    return _two_layer(params.f_a, x_a)


def embed_video(params: ModelParams, x_v):
    """F_V: video features -> embedding"""
    _check_input(x_v, params.arch.dim_video_in, 'video features')
    return _two_layer(params.f_v, x_v)


def embed_text(params: ModelParams, x_t):
    """F_T: class-label text features -> embedding (single affine layer)"""
    _check_input(x_t, params.arch.dim_text_in, 'text features')
    return affine_forward(params.f_t, x_t)


def decode(params: ModelParams, e):
    """F_DEC: embedding of any modality -> reconstructed text features"""
    _check_input(e, params.arch.embed_dim, 'embedding')
    return _two_layer(params.f_dec, e)


def init_params(arch: ArchitectureSpec, seed: int) -> ModelParams:
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases"""
    rng = np.random.default_rng(seed)
    layers = []
    for out_dim, in_dim in arch.layer_shapes():
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(DTYPE)
        layers.append(LayerParams(weight, np.zeros(out_dim, dtype=DTYPE)))
    return ModelParams.from_layers(arch, layers)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write params as little-endian binary; replaces `path` atomically"""
    arch = params.arch
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                          *(getattr(arch, name) for name in _HEADER_DIMS))
    with atomic_write(path, 'wb') as fh:
        fh.write(header)
        for layer in params.layers():
            fh.write(layer.weight.astype('<f8').tobytes(order='C'))
            fh.write(layer.bias.astype('<f8').tobytes())
    logger.info('Checkpoint saved', extra={'path': os.fspath(path), 'n_params': params.num_params()})


def load_checkpoint(path) -> ModelParams:
    with open(path, 'rb') as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f'{path}: not a checkpoint (bad magic {blob[:4]!r})')
    if len(blob) < _HEADER.size:
        raise CheckpointTruncatedError(f'{path}: header truncated ({len(blob)} bytes)')
    _, version, *dims = _HEADER.unpack_from(blob)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f'{path}: unsupported checkpoint version {version}')
    try:
        values = dict(zip(_HEADER_DIMS, dims))
        arch = ArchitectureSpec(decoder_out_dim=values['dim_text_in'], **values)
    except ShapeError as exc:
        raise CheckpointShapeError(f'{path}: inconsistent architecture header: {exc}') from exc

    shapes = arch.layer_shapes()
    expected = _HEADER.size + 8 * sum(o * i + o for o, i in shapes)
    if len(blob) < expected:
        raise CheckpointTruncatedError(f'{path}: expected {expected} bytes, found {len(blob)}')
    if len(blob) > expected:
        raise CheckpointShapeError(
            f'{path}: {len(blob) - expected} trailing bytes after the layers the header describes')

    offset = _HEADER.size
    layers = []
    for out_dim, in_dim in shapes:
        weight = np.frombuffer(blob, dtype='<f8', count=out_dim * in_dim, offset=offset)
        offset += 8 * out_dim * in_dim
        bias = np.frombuffer(blob, dtype='<f8', count=out_dim, offset=offset)
        offset += 8 * out_dim
        layers.append(LayerParams(weight.reshape(out_dim, in_dim).astype(DTYPE),
                                  bias.astype(DTYPE)))
    logger.info('Checkpoint loaded', extra={'path': os.fspath(path)})
    return ModelParams.from_layers(arch, layers)
