"""Deterministic array container: one JSON header line, then raw little-endian arrays.

Same inputs always give the same bytes (no timestamps), which the result
cache relies on.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"ACTIONVOCAB-ARRAYS"


def write_arrays(path, kind: str, version: int, meta: dict, arrays: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in "|" else a.dtype
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"kind": kind, "version": version, "meta": meta, "arrays": entries}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + b" " + json.dumps(header, sort_keys=True).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_arrays(path, kind: str, version: int) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    line, _, body = data.partition(b"\n")
    if not line.startswith(MAGIC + b" "):
        raise ValueError(f"{path}: not an array container")
    header = json.loads(line[len(MAGIC) + 1:])
    if header["kind"] != kind:
        raise ValueError(f"{path}: holds {header['kind']!r}, expected {kind!r}")
    if header["version"] != version:
        raise ValueError(f"{path}: unsupported {kind} version {header['version']}")
    arrays = {}
    for e in header["arrays"]:
        if e["offset"] + e["nbytes"] > len(body):
            raise ValueError(f"{path}: truncated array {e['name']!r}")
        buf = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays
