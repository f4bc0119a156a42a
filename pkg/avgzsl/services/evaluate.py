#!/usr/bin/env python3
"""
Generalized zero-shot classification and retrieval.

Queries are matched against the text embedding of every class (seen and
unseen). With both modalities present the score is the plain mean of the
audio and video distances.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import EvaluationError, MissingModalityError, NoRelevantItemsError, ShapeError
from ..utils import atomic_write, format_real, format_vector, parse_vector
from .data import ClassManifest, FeatureRecord
from .losses import mse_distance
from .model import ModelParams, embed_audio, embed_text, embed_video
from .tensor_core import DTYPE

logger = logging.getLogger(__name__)


class ModalityCondition(enum.Enum):
    AUDIO_ONLY = 'audio'
    VIDEO_ONLY = 'video'
    BOTH = 'both'

    @classmethod
    def parse(cls, text) -> 'ModalityCondition':
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise EvaluationError(f'unknown modality {text!r}; expected audio, video or both') from None

    @property
    def needs_audio(self) -> bool:
        return self is not ModalityCondition.VIDEO_ONLY

    @property
    def needs_video(self) -> bool:
        return self is not ModalityCondition.AUDIO_ONLY


@dataclass
class EvalReport:
    """Per-class metric (percent) with seen/unseen means and their harmonic mean"""
    condition: ModalityCondition
    per_class: Dict[int, float]
    seen: float
    unseen: float
    hm: float
    metric: str = 'accuracy'
    excluded: List[int] = field(default_factory=list)

    @property
    def S(self) -> float:
        return self.seen

    @property
    def U(self) -> float:
        return self.unseen

    @property
    def HM(self) -> float:
        return self.hm

    def summary(self) -> str:
        return f'S={self.seen:.2f} U={self.unseen:.2f} HM={self.hm:.2f}'


def harmonic_mean(seen: float, unseen: float) -> float:
    """2.U.S / (U + S), or 0 when both are 0"""
    total = seen + unseen
    if total <= 0:
        return 0.0
    return 2.0 * unseen * seen / total


def _report(per_class: Dict[int, float], manifest: ClassManifest, condition: ModalityCondition,
            metric: str, excluded: Sequence[int]) -> EvalReport:
    seen = [v for c, v in per_class.items() if manifest.is_seen(c)]
    unseen = [v for c, v in per_class.items() if not manifest.is_seen(c)]
    s = float(np.mean(seen)) if seen else 0.0
    u = float(np.mean(unseen)) if unseen else 0.0
    if excluded:
        logger.warning('Classes left out of the means', extra={'metric': metric, 'classes': list(excluded)})
    return EvalReport(condition, dict(sorted(per_class.items())), s, u, harmonic_mean(s, u),
                      metric, sorted(excluded))


def class_text_embeddings(params: ModelParams, manifest: ClassManifest) -> np.ndarray:
    """Row i is F_T applied to the text feature of class i"""
    if manifest.dim_text != params.arch.dim_text_in:
        raise ShapeError('manifest text dim', params.arch.dim_text_in, manifest.dim_text)
    return np.atleast_2d(embed_text(params, manifest.text_matrix()))


def _stack_modality(records: Sequence[FeatureRecord], attr: str) -> np.ndarray:
    rows = []
    for i, record in enumerate(records):
        value = getattr(record, attr)
        if value is None:
            raise MissingModalityError(f'record {i} has no {attr} features')
        rows.append(np.asarray(value, dtype=DTYPE))
    return np.stack(rows)


def _pairwise_distance(embeddings: np.ndarray, class_embeddings: np.ndarray) -> np.ndarray:
    shape = (embeddings.shape[0], class_embeddings.shape[0], embeddings.shape[1])
    return mse_distance(np.broadcast_to(embeddings[:, None, :], shape),
                        np.broadcast_to(class_embeddings[None, :, :], shape))


def distance_matrix(params: ModelParams, manifest: ClassManifest, records: Sequence[FeatureRecord],
                    condition: ModalityCondition) -> np.ndarray:
    """(n_records x n_classes) query-to-class distances under a modality condition"""
    condition = ModalityCondition.parse(condition)
    if not records:
        raise EvaluationError('no records to score')
    class_emb = class_text_embeddings(params, manifest)
    d_audio = d_video = None
    if condition.needs_audio:
        d_audio = _pairwise_distance(embed_audio(params, _stack_modality(records, 'audio')), class_emb)
    if condition.needs_video:
        d_video = _pairwise_distance(embed_video(params, _stack_modality(records, 'video')), class_emb)
    if condition is ModalityCondition.AUDIO_ONLY:
        return d_audio
    if condition is ModalityCondition.VIDEO_ONLY:
        return d_video
    return (d_audio + d_video) / 2.0


def _candidate_ids(manifest: ClassManifest, candidates: Optional[Iterable[int]]) -> np.ndarray:
    if candidates is None:
        return np.arange(manifest.n_classes)
    ids = np.array(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    if ids.size == 0 or ids[0] < 0 or ids[-1] >= manifest.n_classes:
        raise EvaluationError(f'candidate classes must be a nonempty subset of 0..{manifest.n_classes - 1}')
    return ids


def classify_batch(params: ModelParams, manifest: ClassManifest, records: Sequence[FeatureRecord],
                   condition, candidates: Optional[Iterable[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest class text embedding for every record; ties go to the lowest class id"""
    distances = distance_matrix(params, manifest, records, condition)
    ids = _candidate_ids(manifest, candidates)
    # argmin returns the first minimum, and ids are ascending
    predictions = ids[np.argmin(distances[:, ids], axis=1)]
    return predictions, distances


def classify(params: ModelParams, manifest: ClassManifest, query: FeatureRecord, condition,
             candidates: Optional[Iterable[int]] = None) -> Tuple[int, np.ndarray]:
    """(predicted class id, distance to every class)"""
    predictions, distances = classify_batch(params, manifest, [query], condition, candidates)
    return int(predictions[0]), distances[0]


def mean_class_accuracy(predictions: Sequence[int], ground_truth: Sequence[int], manifest: ClassManifest,
                        condition=ModalityCondition.BOTH, classes: Optional[Iterable[int]] = None) -> EvalReport:
    """Per-class accuracy (percent) and unweighted seen/unseen means.

    Classes without any ground-truth sample are left out of the means and
    listed in `excluded`.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    ground_truth = np.asarray(ground_truth, dtype=np.int64)
    if predictions.shape != ground_truth.shape:
        raise ShapeError('predictions vs ground truth', ground_truth.shape, predictions.shape)
    per_class = {}
    excluded = []
    for c in (range(manifest.n_classes) if classes is None else sorted(classes)):
        mask = ground_truth == c
        total = int(mask.sum())
        if total == 0:
            excluded.append(c)
            continue
        per_class[c] = 100.0 * int((predictions[mask] == c).sum()) / total
    return _report(per_class, manifest, ModalityCondition.parse(condition), 'accuracy', excluded)


def evaluate_classification(params: ModelParams, manifest: ClassManifest, records: Sequence[FeatureRecord],
                            condition, candidates: Optional[Iterable[int]] = None) -> EvalReport:
    """classify every record and score it with mean_class_accuracy"""
    condition = ModalityCondition.parse(condition)
    if candidates is not None:
        candidates = [int(c) for c in candidates]
    predictions, _ = classify_batch(params, manifest, records, condition, candidates)
    truth = [r.class_id for r in records]
    report = mean_class_accuracy(predictions, truth, manifest, condition, classes=candidates)
    logger.info('Classification evaluated', extra={
        'condition': condition.value, 'S': report.seen, 'U': report.unseen, 'HM': report.hm})
    return report


def retrieve(params: ModelParams, manifest: ClassManifest, gallery: Sequence[FeatureRecord],
             query_class: int, condition) -> np.ndarray:
    """Gallery indices sorted by distance to the class's text embedding (stable)"""
    if not gallery:
        raise EvaluationError('retrieval gallery is empty')
    if not 0 <= query_class < manifest.n_classes:
        raise EvaluationError(f'query class {query_class} not in manifest')
    distances = distance_matrix(params, manifest, gallery, condition)
    return np.argsort(distances[:, query_class], kind='stable')


def average_precision(relevance: Sequence) -> float:
    """Mean of precision@k over the relevant positions k, in percent (no interpolation)"""
    flags = np.asarray(relevance, dtype=bool)
    if not flags.any():
        raise NoRelevantItemsError('average precision needs at least one relevant item')
    hits = np.cumsum(flags)
    ranks = np.flatnonzero(flags) + 1
    return 100.0 * float(np.mean(hits[flags] / ranks))


def gzsl_retrieval_eval(params: ModelParams, manifest: ClassManifest, gallery: Sequence[FeatureRecord],
                        condition, candidates: Optional[Iterable[int]] = None) -> EvalReport:
    """Average precision of text-to-modality retrieval for every class"""
    condition = ModalityCondition.parse(condition)
    distances = distance_matrix(params, manifest, gallery, condition)
    labels = np.array([r.class_id for r in gallery], dtype=np.int64)
    per_class = {}
    excluded = []
    for c in _candidate_ids(manifest, candidates):
        c = int(c)
        ranked = np.argsort(distances[:, c], kind='stable')
        flags = labels[ranked] == c
        if not flags.any():
            excluded.append(c)
            continue
        per_class[c] = average_precision(flags)
    report = _report(per_class, manifest, condition, 'ap', excluded)
    logger.info('Retrieval evaluated', extra={
        'condition': condition.value, 'S': report.seen, 'U': report.unseen, 'HM': report.hm})
    return report


def format_report(report: EvalReport) -> str:
    lines = [f'class={c} metric={format_real(v)}' for c, v in report.per_class.items()]
    lines.append(report.summary())
    return '\n'.join(lines) + '\n'


def write_report(report: EvalReport, path) -> None:
    with atomic_write(path, 'w') as fh:
        fh.write(format_report(report))


def export_embeddings(params: ModelParams, records: Sequence[FeatureRecord], manifest: ClassManifest, path) -> int:
    """Write audio/video embeddings per record and text embeddings per class.

    Line format: <kind a|v|t> TAB <class_id> TAB <record_index or -1> TAB <values>.
    Returns the number of lines written.
    """
    lines = []
    if records:
        audio = np.atleast_2d(embed_audio(params, _stack_modality(records, 'audio')))
        video = np.atleast_2d(embed_video(params, _stack_modality(records, 'video')))
        for i, record in enumerate(records):
            lines.append(f'a\t{record.class_id}\t{i}\t{format_vector(audio[i])}')
            lines.append(f'v\t{record.class_id}\t{i}\t{format_vector(video[i])}')
    for c, row in enumerate(class_text_embeddings(params, manifest)):
        lines.append(f't\t{c}\t-1\t{format_vector(row)}')
    with atomic_write(path, 'w') as fh:
        fh.write('\n'.join(lines) + '\n')
    logger.info('Embeddings exported', extra={'rows': len(lines)})
    return len(lines)


def read_embeddings(path) -> List[Tuple[str, int, int, np.ndarray]]:
    rows = []
    with open(path, 'r', encoding='utf-8') as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            parts = line.split('\t')
            if len(parts) != 4 or parts[0] not in ('a', 'v', 't'):
                raise EvaluationError(f'{path}:{lineno}: malformed embedding row')
            rows.append((parts[0], int(parts[1]), int(parts[2]), np.array(parse_vector(parts[3]), dtype=DTYPE)))
    return rows
