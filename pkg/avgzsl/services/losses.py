#!/usr/bin/env python3
"""
Cross-modal decoder loss, composite triplet loss and their total.

All terms are computed for a batch of (p, q) tuple pairs at once; each public
loss function returns the mean over the batch (a single pair is a batch of one).
"""

from dataclasses import dataclass, fields, replace
from functools import cached_property
from typing import Dict, Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError, DegeneratePairError, EmptyBatchError
from .model import ModelParams, decode, embed_audio, embed_text, embed_video
from .tensor_core import DTYPE, Tape, TapeNode, add, hinge, mean, squared_error, value_of

# "mean" averages squared error over coordinates, "sum" adds it up
DISTANCE_REDUCTION = 'mean'

TERMS = ('rec', 'cta', 'ctv', 'ta', 'at', 'tv', 'vt')
CMD_TERMS = ('rec', 'cta', 'ctv')
CT_TERMS = ('ta', 'at', 'tv', 'vt')

PRESETS = {
    'full': TERMS,
    'audio-only': ('ta', 'at'),
    'video-only': ('tv', 'vt'),
}


@dataclass(frozen=True)
class ModalTuple:
    """Audio, video and class-label text features of one data point"""
    audio: np.ndarray
    video: np.ndarray
    text: np.ndarray
    class_id: int


@dataclass(frozen=True)
class TuplePair:
    p: ModalTuple
    q: ModalTuple

    def __post_init__(self):
        if self.p.class_id == self.q.class_id:
            raise DegeneratePairError(f'pair shares class {self.p.class_id}; p and q must differ')


@dataclass
class PairBatch:
    """Row-stacked features of several TuplePairs"""
    audio_p: np.ndarray
    video_p: np.ndarray
    text_p: np.ndarray
    class_p: np.ndarray
    audio_q: np.ndarray
    video_q: np.ndarray
    text_q: np.ndarray
    class_q: np.ndarray

    def __len__(self):
        return int(np.shape(self.class_p)[0])

    @classmethod
    def from_pairs(cls, pairs: Sequence[TuplePair]) -> 'PairBatch':
        if not pairs:
            raise EmptyBatchError('batch holds no pairs')

        def rows(side, attr):
            return np.stack([np.asarray(getattr(getattr(pair, side), attr), dtype=DTYPE) for pair in pairs])

        return cls(
            audio_p=rows('p', 'audio'), video_p=rows('p', 'video'), text_p=rows('p', 'text'),
            class_p=np.array([pair.p.class_id for pair in pairs], dtype=np.int64),
            audio_q=rows('q', 'audio'), video_q=rows('q', 'video'), text_q=rows('q', 'text'),
            class_q=np.array([pair.q.class_id for pair in pairs], dtype=np.int64),
        )

    def validate(self) -> None:
        if len(self) == 0:
            raise EmptyBatchError('batch holds no pairs')
        same = np.flatnonzero(self.class_p == self.class_q)
        if same.size:
            i = int(same[0])
            raise DegeneratePairError(f'pair {i} shares class {int(self.class_p[i])}; p and q must differ')


PairLike = Union[TuplePair, PairBatch, Sequence[TuplePair]]


def as_batch(pairs: PairLike) -> PairBatch:
    if isinstance(pairs, PairBatch):
        return pairs
    if isinstance(pairs, TuplePair):
        return PairBatch.from_pairs([pairs])
    return PairBatch.from_pairs(list(pairs))


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    use_rec: bool = True
    use_cta: bool = True
    use_ctv: bool = True
    use_ta: bool = True
    use_at: bool = True
    use_tv: bool = True
    use_vt: bool = True

    def __post_init__(self):
        if not self.margin >= 0:
            raise ConfigError(f'margin must be >= 0, got {self.margin}')

    def enabled(self, term: str) -> bool:
        return getattr(self, f'use_{term}')

    def enabled_terms(self):
        return tuple(t for t in TERMS if self.enabled(t))

    def without(self, *terms: str) -> 'LossConfig':
        _check_terms(terms)
        return replace(self, **{f'use_{t}': False for t in terms})

    @classmethod
    def only(cls, *terms: str, margin: float = 1.0) -> 'LossConfig':
        _check_terms(terms)
        return cls(margin=margin, **{f'use_{t}': t in terms for t in TERMS})

    @classmethod
    def preset(cls, name: str, margin: float = 1.0) -> 'LossConfig':
        """'full', or the single-modality baselines 'audio-only' / 'video-only'"""
        try:
            terms = PRESETS[name]
        except KeyError:
            raise ConfigError(f'unknown loss preset {name!r}; expected one of {", ".join(PRESETS)}') from None
        return cls.only(*terms, margin=margin)


def _check_terms(terms: Iterable[str]):
    unknown = [t for t in terms if t not in TERMS]
    if unknown:
        raise ConfigError(f'unknown loss term(s) {unknown}; expected {", ".join(TERMS)}')


@dataclass(frozen=True)
class LossReport:
    l_rec: float = 0.0
    l_cta: float = 0.0
    l_ctv: float = 0.0
    l_cmd: float = 0.0
    l_ta: float = 0.0
    l_at: float = 0.0
    l_tv: float = 0.0
    l_vt: float = 0.0
    l_ct: float = 0.0
    total: float = 0.0

    @classmethod
    def from_terms(cls, values: Dict[str, float]) -> 'LossReport':
        """Build a report from per-term means; disabled terms count as 0"""
        v = {t: float(values.get(t, 0.0)) for t in TERMS}
        l_cmd = v['rec'] + v['cta'] + v['ctv']
        l_ct = v['tv'] + v['vt'] + v['ta'] + v['at']
        return cls(l_rec=v['rec'], l_cta=v['cta'], l_ctv=v['ctv'], l_cmd=l_cmd,
                   l_ta=v['ta'], l_at=v['at'], l_tv=v['tv'], l_vt=v['vt'], l_ct=l_ct,
                   total=l_cmd + l_ct)

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def mse_distance(u, v):
    """The distance d of every loss term; reduction follows DISTANCE_REDUCTION"""
    return squared_error(u, v, DISTANCE_REDUCTION)


def triplet_hinge(d_pos, d_neg, margin: float):
    """[d_pos - d_neg + margin]_+"""
    return hinge(d_pos, d_neg, margin)


class _PairEmbeddings:
    """Embeddings and reconstructions of a batch, computed on first use"""

    def __init__(self, params: ModelParams, batch: PairBatch, tape: Optional[Tape] = None):
        self.params = params
        self.batch = batch
        self.tape = tape

    def _input(self, array):
        return self.tape.constant(array) if self.tape is not None else array

    @cached_property
    def x_t_p(self):
        return self._input(self.batch.text_p)

    @cached_property
    def a_p(self):
        return embed_audio(self.params, self._input(self.batch.audio_p))

    @cached_property
    def a_q(self):
        return embed_audio(self.params, self._input(self.batch.audio_q))

    @cached_property
    def v_p(self):
        return embed_video(self.params, self._input(self.batch.video_p))

    @cached_property
    def v_q(self):
        return embed_video(self.params, self._input(self.batch.video_q))

    @cached_property
    def t_p(self):
        return embed_text(self.params, self.x_t_p)

    @cached_property
    def t_q(self):
        return embed_text(self.params, self._input(self.batch.text_q))

    @cached_property
    def dec_t_p(self):
        return decode(self.params, self.t_p)

    @cached_property
    def dec_a_p(self):
        return decode(self.params, self.a_p)

    @cached_property
    def dec_a_q(self):
        return decode(self.params, self.a_q)

    @cached_property
    def dec_v_p(self):
        return decode(self.params, self.v_p)

    @cached_property
    def dec_v_q(self):
        return decode(self.params, self.v_q)


# Per-pair term values (vectors over the batch).

def _rec(e: _PairEmbeddings, margin: float):
    return add(mse_distance(e.dec_t_p, e.x_t_p),
               mse_distance(e.dec_a_p, e.x_t_p),
               mse_distance(e.dec_v_p, e.x_t_p))


def _cta(e, margin):
    # depends on decoded embeddings only; x^t_p is not an input
    return triplet_hinge(mse_distance(e.dec_t_p, e.dec_a_p), mse_distance(e.dec_t_p, e.dec_a_q), margin)


def _ctv(e, margin):
    return triplet_hinge(mse_distance(e.dec_t_p, e.dec_v_p), mse_distance(e.dec_t_p, e.dec_v_q), margin)


def _ta(e, margin):
    return triplet_hinge(mse_distance(e.a_p, e.t_p), mse_distance(e.a_q, e.t_p), margin)


def _at(e, margin):
    return triplet_hinge(mse_distance(e.t_p, e.a_p), mse_distance(e.t_q, e.a_p), margin)


def _tv(e, margin):
    return triplet_hinge(mse_distance(e.v_p, e.t_p), mse_distance(e.v_q, e.t_p), margin)


def _vt(e, margin):
    return triplet_hinge(mse_distance(e.t_p, e.v_p), mse_distance(e.t_q, e.v_p), margin)


_TERM_FNS = {'rec': _rec, 'cta': _cta, 'ctv': _ctv, 'ta': _ta, 'at': _at, 'tv': _tv, 'vt': _vt}


def _term_mean(term: str, pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    batch = as_batch(pairs)
    batch.validate()
    return float(np.mean(value_of(_TERM_FNS[term](_PairEmbeddings(params, batch), margin))))


def loss_rec(pairs: PairLike, params: ModelParams) -> float:
    """Text-feature reconstruction from the text, audio and video embeddings of p"""
    return _term_mean('rec', pairs, params)


def loss_cta(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('cta', pairs, params, margin)


def loss_ctv(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('ctv', pairs, params, margin)


def loss_ta(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('ta', pairs, params, margin)


def loss_at(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('at', pairs, params, margin)


def loss_tv(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('tv', pairs, params, margin)


def loss_vt(pairs: PairLike, params: ModelParams, margin: float = 1.0) -> float:
    return _term_mean('vt', pairs, params, margin)


def _group_sum(group, pairs, params, config: LossConfig) -> float:
    batch = as_batch(pairs)
    batch.validate()
    e = _PairEmbeddings(params, batch)
    terms = [_TERM_FNS[t](e, config.margin) for t in group if config.enabled(t)]
    if not terms:
        return 0.0
    return float(np.mean(value_of(add(*terms))))


def loss_cmd(pairs: PairLike, params: ModelParams, config: LossConfig = LossConfig()) -> float:
    """Enabled terms among L_REC, L_CTA, L_CTV"""
    return _group_sum(CMD_TERMS, pairs, params, config)


def loss_ct(pairs: PairLike, params: ModelParams, config: LossConfig = LossConfig()) -> float:
    """Enabled terms among L_TA, L_AT, L_TV, L_VT"""
    return _group_sum(CT_TERMS, pairs, params, config)


def _evaluate(batch: PairBatch, params: ModelParams, config: LossConfig, tape: Optional[Tape]):
    e = _PairEmbeddings(params, batch, tape)
    per_term = {t: _TERM_FNS[t](e, config.margin) for t in config.enabled_terms()}
    report = LossReport.from_terms({t: float(np.mean(value_of(v))) for t, v in per_term.items()})
    return per_term, report


def total_loss(pairs: PairLike, params: ModelParams, config: LossConfig = LossConfig(),
               tape: Optional[Tape] = None):
    """Mean over pairs of L_CMD + L_CT, recorded on a tape for backward.

    Returns (scalar TapeNode, LossReport).
    """
    batch = as_batch(pairs)
    batch.validate()
    tape = tape if tape is not None else Tape()
    per_term, report = _evaluate(batch, params, config, tape)
    if per_term:
        scalar = mean(add(*per_term.values()))
    else:
        scalar = tape.constant(0.0)
    return scalar, report


def total_loss_value(pairs: PairLike, params: ModelParams, config: LossConfig = LossConfig()):
    """Untaped value of the scalar total_loss returns, as a numpy scalar of the params' precision"""
    batch = as_batch(pairs)
    batch.validate()
    per_term, _ = _evaluate(batch, params, config, None)
    if not per_term:
        return 0.0
    return mean(add(*per_term.values()))[()]


def loss_report(pairs: PairLike, params: ModelParams, config: LossConfig = LossConfig()) -> LossReport:
    """LossReport without recording a tape"""
    batch = as_batch(pairs)
    batch.validate()
    return _evaluate(batch, params, config, None)[1]
