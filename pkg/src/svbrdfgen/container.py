"""Single-file checkpoint container: JSON header plus raw little-endian
array data. The header carries a format version, caller metadata and a
table mapping each array name to dtype/shape/offset, so weights round-trip
bit-exactly and files stay readable without the package.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"SVBG"
_VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


def write_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    table = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = {np.dtype(np.float32): "f4", np.dtype(np.float64): "f8", np.dtype(np.int64): "i8"}.get(
            arr.dtype
        )
        if code is None:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        raw = arr.astype(_DTYPES[code]).tobytes()
        table[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": _VERSION, "meta": meta or {}, "arrays": table}, sort_keys=True
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        (version,) = struct.unpack("<I", f.read(4))
        if version > _VERSION:
            raise ValueError(f"{path}: container version {version} is newer than supported")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        payload = f.read()
    arrays = {}
    for name, info in header["arrays"].items():
        dt = np.dtype(_DTYPES[info["dtype"]])
        count = int(np.prod(info["shape"])) if info["shape"] else 1
        start = info["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=start)
        arrays[name] = arr.reshape(info["shape"]).copy()
    return arrays, header["meta"]
