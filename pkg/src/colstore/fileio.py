"""Durable file writes."""
from __future__ import annotations

import os


def write_durable(path: str, data: bytes) -> None:
    with open(path, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())


def replace_durable(path: str, data: bytes) -> None:
    """Atomically replace ``path``: write a temp file, fsync, rename, fsync dir."""
    tmp = path + ".tmp"
    write_durable(tmp, data)
    os.replace(tmp, path)
    fsync_dir(os.path.dirname(path) or ".")


def fsync_dir(path: str) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)
