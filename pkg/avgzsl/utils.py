#!/usr/bin/env python3
"""
Utility functions for the AVGZSL lab
"""

import os
import tempfile
from contextlib import contextmanager


def format_real(value) -> str:
    """Shortest decimal text that parses back to the same 64-bit real"""
    return repr(float(value))


def format_vector(values) -> str:
    return ' '.join(format_real(v) for v in values)


def parse_vector(text: str):
    return [float(tok) for tok in text.split()]


@contextmanager
def atomic_write(path, mode='w'):
    """Open a temp file next to `path`; rename it over `path` only on success.

    A failure inside the block leaves no partial output behind.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.' + os.path.basename(path) + '.', dir=directory)
    encoding = None if 'b' in mode else 'utf-8'
    try:
        with os.fdopen(fd, mode, encoding=encoding) as fh:
            yield fh
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.remove(tmp_path)
        except OSError:
            pass  # already gone
        raise
