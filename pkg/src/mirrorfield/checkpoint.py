"""Portable checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"MFCKPT01"
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header
    ...       raw array payloads, each starting on an 8-byte boundary

The header holds ``{"meta": {...}, "arrays": [{"name", "dtype", "shape",
"offset", "nbytes"}, ...]}`` with offsets relative to the payload start and
dtypes written as explicit little-endian numpy codes (``"<f4"``, ``"<f8"``,
``"<i8"``). Files contain no timestamps, so identical state gives identical
bytes.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFCKPT01"
_ALIGN = 8


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict):
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        pad = (-len(raw)) % _ALIGN
        blobs.append(raw + b"\0" * pad)
        offset += len(raw) + pad
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    header += b" " * ((-len(header)) % _ALIGN)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"could not write checkpoint {path}: {exc}") from exc


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint header in {path}: {exc}") from None
    base = 16 + n
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"checkpoint {path} is truncated at array {e['name']}")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header["meta"]
