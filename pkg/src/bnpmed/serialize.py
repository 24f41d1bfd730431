"""On-disk formats: posterior draws (npz + JSON metadata) and JSON reports.

Every file is written to a temporary name in the target directory and moved
into place, so readers never see partial output.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .posterior import Posterior

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    _atomic_write(path, lambda fh: fh.write(text.encode()))


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    write_text(path, dumps_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_posterior(post: Posterior, path) -> None:
    meta = dict(post.meta)
    meta.update(format_version=FORMAT_VERSION, tag=post.tag, code_version=__version__)
    arrays = {k: np.asarray(v) for k, v in post.arrays.items()}
    arrays["__meta__"] = np.frombuffer(dumps_json(meta).encode(), dtype=np.uint8)
    _atomic_write(path, lambda fh: np.savez_compressed(fh, **arrays))


def load_posterior(path) -> Posterior:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise FormatError(f"{path}: not a draws file (missing metadata)")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {meta.get('format_version')}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return Posterior(meta["tag"], arrays, meta)
