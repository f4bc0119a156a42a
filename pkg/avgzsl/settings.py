#!/usr/bin/env python3
"""
Configuration defaults and config-file handling for the AVGZSL lab
"""

import logging
import os
from typing import Any, Dict, Mapping, Optional

from .errors import ConfigError

# (key, default value, description); the default's type is the key's type
DEFAULT_SETTINGS = [
    # training
    ('epochs', 30, 'Number of training epochs'),
    ('batch_size', 64, 'Pairs per optimizer step'),
    ('steps_per_epoch', 0, 'Optimizer steps per epoch (0 = ceil(n_train / batch_size))'),
    ('learning_rate', 1e-3, 'Optimizer step size'),
    ('optimizer', 'adaptive-moment', 'plain-sgd | momentum-sgd | adaptive-moment'),
    ('seed', 0, 'Seed for every random draw'),
    ('checkpoint_every', 0, 'Write an epoch checkpoint every N epochs (0 = off)'),
    ('holdout_classes', 0, 'Seen classes held out of training and validated as unseen'),
    ('margin', 1.0, 'Triplet margin delta'),
    ('baseline', 'full', 'Loss preset: full | audio-only | video-only'),
    # architecture
    ('embed_dim', 64, 'Shared embedding dimension'),
    ('hidden_audio', 512, 'Hidden width of the audio projection network'),
    ('hidden_video', 512, 'Hidden width of the video projection network'),
    ('hidden_decoder', 128, 'Hidden width of the cross-modal decoder'),
    # synthetic data
    ('seen', 8, 'Seen classes for gen-data'),
    ('unseen', 4, 'Unseen classes for gen-data'),
    ('per_class', 50, 'Records per class for gen-data'),
    ('dim_audio', 1024, 'Audio feature dimension for gen-data'),
    ('dim_video', 1024, 'Video feature dimension for gen-data'),
    ('dim_text', 300, 'Text feature dimension for gen-data'),
    ('noise', 0.1, 'Feature noise sigma for gen-data'),
    # evaluation
    ('modality', 'both', 'audio | video | both'),
    ('split', 'test', 'Split evaluated by eval-cls / eval-ret / export-emb'),
    # logging
    ('log_level', 'info', 'quiet | info | debug'),
]

DEFAULTS: Dict[str, Any] = {key: value for key, value, _ in DEFAULT_SETTINGS}

LOG_LEVELS = {
    'quiet': logging.WARNING,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def coerce(key: str, raw: Any) -> Any:
    """Convert a raw value to the type of the key's default"""
    if key not in DEFAULTS:
        raise ConfigError(f'Unknown setting: {key}')
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f'Invalid value for {key}: {raw!r}') from exc
    return text


def load_config_file(path) -> Dict[str, Any]:
    """Parse a flat key=value config file"""
    if not os.path.isfile(path):
        raise FileNotFoundError(f'Config file not found: {path}')
    values: Dict[str, Any] = {}
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ConfigError(f'{path}: config file is not valid UTF-8 (byte {exc.start})') from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ConfigError(f'{path}:{lineno}: expected key=value')
        key, value = (part.strip() for part in stripped.split('=', 1))
        key = key.replace('-', '_')
        if key not in DEFAULTS:
            raise ConfigError(f'{path}:{lineno}: unknown setting {key!r}')
        values[key] = coerce(key, value)
    return values


def resolve_settings(flags: Optional[Mapping[str, Any]] = None, config_path=None) -> Dict[str, Any]:
    """Merge settings: flags > config file > defaults. Flags set to None are ignored."""
    resolved = dict(DEFAULTS)
    if config_path:
        resolved.update(load_config_file(config_path))
    for key, value in (flags or {}).items():
        if value is None or key not in DEFAULTS:
            continue
        resolved[key] = coerce(key, value)
    return resolved


def log_level(name: str) -> int:
    try:
        return LOG_LEVELS[str(name).strip().lower()]
    except KeyError:
        raise ConfigError(f'Invalid log level {name!r}; expected one of {", ".join(LOG_LEVELS)}') from None
