"""Named-array container used for every checkpoint and array corpus.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"DPARRAYS"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length N
    offset 20  N bytes   UTF-8 JSON header, keys sorted:
                         {"arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
                          "meta": {...}}
    offset 20+N          data blob; each array C-ordered, little-endian,
                         ``offset`` measured from the blob start

Arrays are written in name order, so writing the same content twice gives
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DPARRAYS"
FORMAT_VERSION = 1
_ALLOWED = {"f8": "<f8", "f4": "<f4", "i8": "<i8", "i4": "<i4", "u1": "|u1", "b1": "|b1"}


class CheckpointError(ValueError):
    pass


def _le(arr: np.ndarray) -> np.ndarray:
    key = arr.dtype.kind + str(arr.dtype.itemsize)
    if key not in _ALLOWED:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.dtype(_ALLOWED[key]))


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = _le(np.asarray(arrays[name]))
        raw = a.tobytes(order="C")
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a driftplan array container (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    header = json.loads(buf[20:20 + hlen].decode("utf-8"))
    blob = memoryview(buf)[20 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())
