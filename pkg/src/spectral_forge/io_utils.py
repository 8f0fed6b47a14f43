"""Atomic file writes and the flat ``key=value`` config format."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Mapping


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_kv(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    lines = []
    for k, v in values.items():
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        s = str(v)
        if "\n" in s or "=" in k:
            raise ValueError(f"cannot store {k!r} in a key=value file")
        lines.append(f"{k}={s}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        out[key.strip()] = value.strip()
    return out
