"""Flat binary checkpoint format (version 1).

Layout::

    8 bytes   magic b"BFCKPT\\x00\\x01"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header: {"version", "meta", "tensors": [{"name", "shape", "offset"}]}
    ...       float64 little-endian values, row-major, concatenated in header order

``offset`` counts float64 values from the start of the data block.  The JSON
header is written with sorted keys so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"BFCKPT\x00\x01"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, n = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[20:20 + n])
    data = np.frombuffer(buf[20 + n:], dtype="<f8")
    out = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        out[e["name"]] = data[e["offset"]: e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return out, header["meta"]


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
