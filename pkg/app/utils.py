import hashlib
import os
import tempfile
import zlib
from contextlib import contextmanager

import numpy as np


def compute_file_hash(file_path: str, length: int = 64) -> str:
    """SHA256 hex digest of a file, cut to `length` characters for log lines."""
    if not 1 <= length <= 64:
        raise ValueError(f"digest length must be in [1, 64], got {length}")
    h = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:length]


@contextmanager
def atomic_write(path: str, mode: str = "wb"):
    """
    Write to a temp file beside `path` and rename it into place on success.
    On any exception the temp file is removed and `path` is left untouched.
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        newline = "" if "b" not in mode else None
        with os.fdopen(fd, mode, newline=newline) as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stream (init, train, synth ...) of one seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(stream.encode()),)))
