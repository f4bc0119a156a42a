#!/usr/bin/env python3
"""
Exception types for the AVGZSL lab
"""


class AvgzslError(Exception):
    """Base class for every error raised by the lab."""


class ShapeError(AvgzslError, ValueError):
    """Dimension mismatch between an operand and what an operation expects."""

    def __init__(self, what: str, expected, actual):
        super().__init__(f'{what}: expected {expected}, got {actual}')
        self.expected = expected
        self.actual = actual


class NonFiniteError(AvgzslError):
    """A NaN or Inf showed up where a finite value is required."""

    def __init__(self, message: str, *, step=None, term=None):
        super().__init__(message)
        self.step = step
        self.term = term


class ConfigError(AvgzslError):
    """Invalid configuration value or config file."""


# Checkpoints

class CheckpointError(AvgzslError):
    """Checkpoint file could not be read."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


# Datasets

class DatasetError(AvgzslError):
    """Feature store or manifest failed validation."""


class BadMagicError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class ManifestFormatError(DatasetError):
    pass


class UnknownClassError(DatasetError):
    def __init__(self, record_index: int, class_id: int, n_classes: int):
        super().__init__(
            f'record {record_index}: class id {class_id} not in manifest ({n_classes} classes)'
        )
        self.record_index = record_index
        self.class_id = class_id


class NonFiniteValueError(DatasetError):
    def __init__(self, record_index: int, field: str, coordinate: int):
        super().__init__(
            f'record {record_index}: non-finite {field} value at coordinate {coordinate}'
        )
        self.record_index = record_index
        self.field = field
        self.coordinate = coordinate


class SamplingError(AvgzslError):
    """Pairs with differing classes cannot be drawn from the given records."""


# Losses

class LossError(AvgzslError):
    pass


class EmptyBatchError(LossError):
    pass


class DegeneratePairError(LossError):
    pass


# Evaluation

class EvaluationError(AvgzslError):
    pass


class MissingModalityError(EvaluationError):
    pass


class NoRelevantItemsError(EvaluationError):
    pass
