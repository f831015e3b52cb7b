"""Small filesystem helpers."""

from __future__ import annotations

import os
import tempfile


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file + rename so failures leave no partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".tmp.")
    try:
        with os.fdopen(fd, mode, encoding=None if isinstance(data, bytes) else "utf-8") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
