"""Binary parameter container plus JSON sidecar for configs and run metadata.

Layout of the binary file: magic "SELKD1", little-endian u32 tensor count,
then per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims, raw
float64 little-endian values in C order. Tensors are written sorted by name
so files are byte-stable for a given parameter set.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SELKD1"


def save_tensors(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a parameter checkpoint (bad magic)")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += n * 8
        out[name] = arr.astype(np.float64)
    if off != len(blob):
        raise DataError(f"{path} has {len(blob) - off} trailing bytes")
    return out


def save_sidecar(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())
