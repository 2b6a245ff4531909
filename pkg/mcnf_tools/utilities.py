#!/usr/bin/env python3
"""
Utilities
Helper functions shared by the training, evaluation and reporting code
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


def make_rng(seed, *tags):
    """
    Independent random stream for (seed, tags...)

    Streams are derived with numpy SeedSequence so that e.g. (seed, step, chunk)
    always yields the same numbers regardless of evaluation order or threading.
    """
    entropy = [int(seed)] + [int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def atomic_write_bytes(path, data):
    """Write bytes to path via a temporary file in the same directory and a rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    """Atomic UTF-8 text write"""
    return atomic_write_bytes(path, text.encode('utf-8'))


def write_json(path, payload):
    """Atomically write a JSON document (sorted keys, 2-space indent)"""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    """Atomically write a CSV file with a header row"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return atomic_write_text(path, buf.getvalue())


def format_float(value):
    """Shortest round-trip decimal representation of a float"""
    return repr(float(value))


def split_chunks(count, chunk_size):
    """Consecutive (start, stop) ranges of at most chunk_size covering range(count)"""
    return [(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]
