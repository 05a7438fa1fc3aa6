"""Versioned binary container for named float64 arrays.

Layout::

    b"FNV1" | uint32 version | uint32 header_len | header JSON | raw data

The header lists sections, and for each array its dtype, shape and byte
offset into the data block. All arrays are stored little-endian float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation

MAGIC = b"FNV1"
VERSION = 1


def write_container(path, sections: dict[str, dict[str, np.ndarray]], meta: dict | None = None) -> None:
    entries, blobs, offset = {}, [], 0
    for sec, arrays in sections.items():
        entries[sec] = {}
        for name, arr in arrays.items():
            a = np.array(arr, dtype="<f8", order="C")
            entries[sec][name] = {"shape": list(a.shape), "offset": offset}
            blobs.append(a.tobytes())
            offset += a.nbytes
    header = json.dumps({"meta": meta or {}, "sections": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    """Return (meta, sections)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContractViolation(f"{path}: not an FNV1 container")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ContractViolation(f"{path}: unsupported container version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    data = memoryview(raw)[12 + hlen:]
    sections = {}
    for sec, arrays in header["sections"].items():
        sections[sec] = {}
        for name, ent in arrays.items():
            n = int(np.prod(ent["shape"], dtype=np.int64))
            a = np.frombuffer(data, dtype="<f8", count=n, offset=ent["offset"])
            sections[sec][name] = a.reshape(tuple(ent["shape"])).astype(np.float64)
    return header["meta"], sections
