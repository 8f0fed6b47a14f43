"""``SFCKPT1`` weight checkpoints.

Layout (little-endian)::

    b"SFCKPT1\\n"        magic
    uint32 H             JSON header length
    H bytes              JSON header: {"params": [{"name", "shape"}...], ...caller metadata}
    float32[...]         parameters concatenated in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError
from ..io_utils import atomic_write_bytes

MAGIC = b"SFCKPT1\n"


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = dict(meta or {})
    header["params"] = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in state.values())
    atomic_write_bytes(path, MAGIC + struct.pack("<I", len(hb)) + hb + body)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: not an SFCKPT1 file")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    state = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if off + 4 * n > len(blob):
            raise CheckpointFormatError(f"{path}: truncated at {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(np.float32)
        off += 4 * n
    if off != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return state, header
