#!/usr/bin/env python3
"""
Feature store, class manifest, pair sampling and the synthetic dataset generator
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import (
    BadMagicError,
    DatasetError,
    DimensionMismatchError,
    ManifestFormatError,
    NonFiniteValueError,
    SamplingError,
    UnknownClassError,
)
from ..utils import atomic_write, format_vector
from .losses import PairBatch
from .tensor_core import DTYPE

logger = logging.getLogger(__name__)

MANIFEST_MAGIC = 'AVZM'
RECORDS_MAGIC = b'AVZF'
FORMAT_VERSION = 1
SPLITS = ('train', 'val', 'test')
SPLIT_RATIOS = (0.7, 0.1, 0.2)

_RECORDS_HEADER = struct.Struct('<4sIIII')


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One data point. A query may leave out a modality (None)."""
    class_id: int
    audio: Optional[np.ndarray]
    video: Optional[np.ndarray]

    def same_as(self, other: 'FeatureRecord') -> bool:
        def same(x, y):
            if x is None or y is None:
                return x is None and y is None
            return x.shape == y.shape and x.tobytes() == y.tobytes()
        return self.class_id == other.class_id and same(self.audio, other.audio) and same(self.video, other.video)


@dataclass(frozen=True, eq=False)
class ClassInfo:
    id: int
    name: str
    seen: bool
    text: np.ndarray


@dataclass(eq=False)
class ClassManifest:
    classes: List[ClassInfo]

    def __post_init__(self):
        if not self.classes:
            raise ManifestFormatError('manifest lists no classes')
        dim = self.classes[0].text.shape[0]
        for position, info in enumerate(self.classes):
            if info.id != position:
                raise ManifestFormatError(f'class ids must run 0..n-1; position {position} holds id {info.id}')
            if info.text.shape != (dim,):
                raise DimensionMismatchError(
                    f'class {info.id}: text feature has {info.text.shape[0]} dims, expected {dim}')
            bad = np.flatnonzero(~np.isfinite(info.text))
            if bad.size:
                raise ManifestFormatError(f'class {info.id}: non-finite text value at coordinate {int(bad[0])}')
        if not any(info.seen for info in self.classes):
            raise ManifestFormatError('manifest has no seen class')

    def __len__(self):
        return len(self.classes)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def dim_text(self) -> int:
        return self.classes[0].text.shape[0]

    @property
    def seen_ids(self) -> List[int]:
        return [c.id for c in self.classes if c.seen]

    @property
    def unseen_ids(self) -> List[int]:
        return [c.id for c in self.classes if not c.seen]

    def is_seen(self, class_id: int) -> bool:
        return self.classes[class_id].seen

    def text_matrix(self) -> np.ndarray:
        return np.stack([c.text for c in self.classes]).astype(DTYPE)

    def same_as(self, other: 'ClassManifest') -> bool:
        return len(self) == len(other) and all(
            a.id == b.id and a.name == b.name and a.seen == b.seen and a.text.tobytes() == b.text.tobytes()
            for a, b in zip(self.classes, other.classes))


@dataclass
class SplitSet:
    train: List[FeatureRecord] = field(default_factory=list)
    validation: List[FeatureRecord] = field(default_factory=list)
    test: List[FeatureRecord] = field(default_factory=list)

    def get(self, split: str) -> List[FeatureRecord]:
        if split == 'train':
            return self.train
        if split in ('val', 'validation'):
            return self.validation
        if split == 'test':
            return self.test
        raise DatasetError(f'unknown split {split!r}; expected train, val or test')


@dataclass
class Dataset:
    manifest: ClassManifest
    splits: SplitSet

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(Da, Dv, Dt)"""
        for records in (self.splits.train, self.splits.validation, self.splits.test):
            if records:
                return records[0].audio.shape[0], records[0].video.shape[0], self.manifest.dim_text
        raise DatasetError('dataset holds no records')


# File layout

def dataset_paths(stem) -> dict:
    stem = os.fspath(stem)
    paths = {'manifest': f'{stem}.avzm'}
    paths.update({split: f'{stem}.{split}.avzf' for split in SPLITS})
    return paths


def write_manifest(manifest: ClassManifest, path) -> None:
    with atomic_write(path, 'w') as fh:
        fh.write(f'{MANIFEST_MAGIC} {FORMAT_VERSION} {manifest.n_classes} {manifest.dim_text}\n')
        for info in manifest.classes:
            if '\t' in info.name or '\n' in info.name:
                raise ManifestFormatError(f'class {info.id}: name may not contain tabs or newlines')
            fh.write(f'{info.id}\t{info.name}\t{"S" if info.seen else "U"}\t{format_vector(info.text)}\n')


def read_manifest(path) -> ClassManifest:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise ManifestFormatError(f'{path}: manifest is not valid UTF-8 (byte {exc.start})') from exc
    if not lines:
        raise BadMagicError(f'{path}: empty manifest')
    header = lines[0].split()
    if len(header) != 4 or header[0] != MANIFEST_MAGIC:
        raise BadMagicError(f'{path}: bad manifest header {lines[0]!r}')
    try:
        version, n_classes, dim_text = (int(tok) for tok in header[1:])
    except ValueError as exc:
        raise ManifestFormatError(f'{path}: unreadable header {lines[0]!r}') from exc
    if version != FORMAT_VERSION:
        raise DatasetError(f'{path}: unsupported manifest version {version}')
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != n_classes:
        raise ManifestFormatError(f'{path}: header declares {n_classes} classes, found {len(body)}')
    classes = []
    for lineno, line in enumerate(body, start=2):
        parts = line.split('\t')
        if len(parts) != 4 or parts[2] not in ('S', 'U'):
            raise ManifestFormatError(f'{path}:{lineno}: expected <id> TAB <name> TAB <S|U> TAB <values>')
        try:
            class_id = int(parts[0])
            text = np.array([float(tok) for tok in parts[3].split()], dtype=DTYPE)
        except ValueError as exc:
            raise ManifestFormatError(f'{path}:{lineno}: {exc}') from exc
        if text.shape[0] != dim_text:
            raise DimensionMismatchError(
                f'{path}:{lineno}: class {class_id} text has {text.shape[0]} dims, header says {dim_text}')
        classes.append(ClassInfo(class_id, parts[1], parts[2] == 'S', text))
    return ClassManifest(classes)


def write_records(records: Sequence[FeatureRecord], path, dim_audio: Optional[int] = None,
                  dim_video: Optional[int] = None) -> None:
    """Records file: header, then class id + float32 audio + float32 video per record"""
    if records:
        dim_audio = records[0].audio.shape[0]
        dim_video = records[0].video.shape[0]
    if dim_audio is None or dim_video is None:
        raise DatasetError('empty records file needs explicit feature dims')
    dtype = _record_dtype(dim_audio, dim_video)
    table = np.zeros(len(records), dtype=dtype)
    for i, record in enumerate(records):
        if record.audio.shape != (dim_audio,) or record.video.shape != (dim_video,):
            raise DimensionMismatchError(f'record {i}: feature dims differ from record 0')
        table[i] = (record.class_id, record.audio, record.video)
    with atomic_write(path, 'wb') as fh:
        fh.write(_RECORDS_HEADER.pack(RECORDS_MAGIC, FORMAT_VERSION, len(records), dim_audio, dim_video))
        fh.write(table.tobytes())


def _record_dtype(dim_audio: int, dim_video: int) -> np.dtype:
    return np.dtype([('class_id', '<u4'), ('audio', '<f4', (dim_audio,)), ('video', '<f4', (dim_video,))])


def read_records(path) -> Tuple[List[FeatureRecord], int, int]:
    """Returns (records, Da, Dv); features are widened to 64-bit"""
    with open(path, 'rb') as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != RECORDS_MAGIC:
        raise BadMagicError(f'{path}: not a records file (bad magic {blob[:4]!r})')
    if len(blob) < _RECORDS_HEADER.size:
        raise DatasetError(f'{path}: header truncated')
    _, version, n_records, dim_audio, dim_video = _RECORDS_HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise DatasetError(f'{path}: unsupported records version {version}')
    dtype = _record_dtype(dim_audio, dim_video)
    expected = _RECORDS_HEADER.size + n_records * dtype.itemsize
    if len(blob) != expected:
        raise DatasetError(f'{path}: expected {expected} bytes for {n_records} records, found {len(blob)}')
    if n_records == 0:
        return [], dim_audio, dim_video
    table = np.frombuffer(blob, dtype=dtype, count=n_records, offset=_RECORDS_HEADER.size)
    records = []
    for i in range(n_records):
        row = table[i]
        for name in ('audio', 'video'):
            bad = np.flatnonzero(~np.isfinite(row[name]))
            if bad.size:
                raise NonFiniteValueError(i, name, int(bad[0]))
        records.append(FeatureRecord(int(row['class_id']),
                                     row['audio'].astype(DTYPE), row['video'].astype(DTYPE)))
    return records, dim_audio, dim_video


def save_dataset(dataset: Dataset, stem) -> dict:
    paths = dataset_paths(stem)
    dim_audio, dim_video, _ = dataset.dims
    write_manifest(dataset.manifest, paths['manifest'])
    for split in SPLITS:
        write_records(dataset.splits.get(split), paths[split], dim_audio, dim_video)
    logger.info('Dataset written', extra={'stem': os.fspath(stem), 'n_classes': dataset.manifest.n_classes})
    return paths


def load_dataset(manifest_path, train_path, val_path, test_path) -> Dataset:
    """Read and validate a manifest plus its three split files"""
    manifest = read_manifest(manifest_path)
    splits = {}
    dims = None
    for split, path in zip(SPLITS, (train_path, val_path, test_path)):
        records, dim_audio, dim_video = read_records(path)
        if dims is None:
            dims = (dim_audio, dim_video)
        elif dims != (dim_audio, dim_video):
            raise DimensionMismatchError(
                f'{path}: feature dims {(dim_audio, dim_video)} differ from {dims} in the other splits')
        for i, record in enumerate(records):
            if not 0 <= record.class_id < manifest.n_classes:
                raise UnknownClassError(i, record.class_id, manifest.n_classes)
        splits[split] = records
    for i, record in enumerate(splits['train']):
        if not manifest.is_seen(record.class_id):
            raise DatasetError(f'{train_path}: record {i} belongs to unseen class {record.class_id}')
    dataset = Dataset(manifest, SplitSet(splits['train'], splits['val'], splits['test']))
    logger.info('Dataset loaded', extra={
        'n_classes': manifest.n_classes,
        'n_train': len(splits['train']), 'n_val': len(splits['val']), 'n_test': len(splits['test']),
    })
    return dataset


def load_dataset_stem(stem) -> Dataset:
    paths = dataset_paths(stem)
    for key, path in paths.items():
        if not os.path.isfile(path):
            raise FileNotFoundError(f'Dataset file not found: {path}')
    return load_dataset(paths['manifest'], paths['train'], paths['val'], paths['test'])


# Pair sampling

class PairSampler:
    """Draws (p, q) pairs with different classes.

    p is uniform over records; q is uniform over the records of every other class.
    """

    def __init__(self, records: Sequence[FeatureRecord], manifest: ClassManifest):
        if not records:
            raise SamplingError('no records to sample from')
        self.classes = np.array([r.class_id for r in records], dtype=np.int64)
        present = np.unique(self.classes)
        if present.size < 2:
            raise SamplingError(f'pairs need records from at least 2 classes, found {present.size}')
        self.audio = np.stack([r.audio for r in records]).astype(DTYPE)
        self.video = np.stack([r.video for r in records]).astype(DTYPE)
        self.text = manifest.text_matrix()
        self.order = np.argsort(self.classes, kind='stable')
        sorted_classes = self.classes[self.order]
        n_ids = int(sorted_classes[-1]) + 1
        self.start = np.zeros(n_ids, dtype=np.int64)
        self.count = np.zeros(n_ids, dtype=np.int64)
        ids, first, counts = np.unique(sorted_classes, return_index=True, return_counts=True)
        self.start[ids] = first
        self.count[ids] = counts

    def __len__(self):
        return self.classes.shape[0]

    def indices(self, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise SamplingError(f'batch_size must be >= 1, got {batch_size}')
        n = len(self)
        p_idx = rng.integers(0, n, size=batch_size)
        c = self.classes[p_idx]
        k = rng.integers(0, n - self.count[c])
        # skip over the block that class c occupies in class-sorted order
        position = np.where(k < self.start[c], k, k + self.count[c])
        return p_idx, self.order[position]

    def sample(self, batch_size: int, rng: np.random.Generator) -> PairBatch:
        p_idx, q_idx = self.indices(batch_size, rng)
        cp, cq = self.classes[p_idx], self.classes[q_idx]
        return PairBatch(
            audio_p=self.audio[p_idx], video_p=self.video[p_idx], text_p=self.text[cp], class_p=cp,
            audio_q=self.audio[q_idx], video_q=self.video[q_idx], text_q=self.text[cq], class_q=cq,
        )


def sample_pairs(records: Sequence[FeatureRecord], batch_size: int, rng: np.random.Generator,
                 manifest: ClassManifest) -> PairBatch:
    return PairSampler(records, manifest).sample(batch_size, rng)


# Synthetic data

def _split_counts(per_class: int) -> Tuple[int, int]:
    n_train = min(max(1, int(round(SPLIT_RATIOS[0] * per_class))), per_class - 1)
    n_val = min(int(round(SPLIT_RATIOS[1] * per_class)), per_class - n_train - 1)
    return n_train, max(0, n_val)


def gen_synthetic(n_seen: int, n_unseen: int, per_class: int, dims=(1024, 1024, 300),
                  noise_sigma: float = 0.1, seed: int = 0) -> Dataset:
    """Classes whose text prototype linearly predicts both modalities.

    Prototypes lie on the unit sphere; audio = A.prototype + noise and
    video = B.prototype + noise with A, B shared by all classes. Seen classes
    split 70/10/20 into train/val/test, unseen classes go to test only.
    """
    if n_seen < 2 or n_unseen < 1 or per_class < 2:
        raise DatasetError(f'need n_seen >= 2, n_unseen >= 1, per_class >= 2 '
                           f'(got {n_seen}, {n_unseen}, {per_class})')
    if not noise_sigma >= 0:
        raise DatasetError(f'noise_sigma must be >= 0, got {noise_sigma}')
    dim_audio, dim_video, dim_text = (int(d) for d in dims)
    if min(dim_audio, dim_video, dim_text) < 1:
        raise DatasetError(f'feature dims must be >= 1, got {dims}')

    rng = np.random.default_rng(seed)
    n_classes = n_seen + n_unseen
    prototypes = rng.standard_normal((n_classes, dim_text))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    map_audio = rng.standard_normal((dim_audio, dim_text))
    map_video = rng.standard_normal((dim_video, dim_text))

    classes = [ClassInfo(c, f'class_{c:02d}', c < n_seen, prototypes[c].astype(DTYPE)) for c in range(n_classes)]
    n_train, n_val = _split_counts(per_class)
    splits = SplitSet()
    for c in range(n_classes):
        audio = prototypes[c] @ map_audio.T + noise_sigma * rng.standard_normal((per_class, dim_audio))
        video = prototypes[c] @ map_video.T + noise_sigma * rng.standard_normal((per_class, dim_video))
        # stored as float32 on disk; keep memory identical to what a reload gives
        audio = audio.astype(np.float32).astype(DTYPE)
        video = video.astype(np.float32).astype(DTYPE)
        records = [FeatureRecord(c, audio[i], video[i]) for i in range(per_class)]
        if c < n_seen:
            perm = rng.permutation(per_class)
            splits.train.extend(records[i] for i in perm[:n_train])
            splits.validation.extend(records[i] for i in perm[n_train:n_train + n_val])
            splits.test.extend(records[i] for i in perm[n_train + n_val:])
        else:
            splits.test.extend(records)
    dataset = Dataset(ClassManifest(classes), splits)
    logger.info('Synthetic dataset generated', extra={
        'n_seen': n_seen, 'n_unseen': n_unseen, 'per_class': per_class,
        'noise_sigma': noise_sigma, 'seed': seed,
    })
    return dataset
