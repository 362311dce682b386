"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MNL1"                      4-byte magic
    uint32 version               currently 1
    uint32 manifest_length       byte length of the manifest
    manifest                     UTF-8 JSON: {"arrays": [{"name", "shape", "dtype",
                                 "offset", "nbytes"}, ...]}; offsets are relative
                                 to the start of the data section
    data                         raw little-endian array bytes, in manifest order
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MNL1"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_checkpoint(path, arrays: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name in arrays:
        arr = np.asarray(arrays[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise FormatError(f"{name}: unsupported dtype {dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"arrays": entries}, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise FormatError("truncated checkpoint header")
    version, mlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(blob[12:12 + mlen].decode())
    except ValueError as exc:
        raise FormatError(f"corrupt manifest: {exc}") from None
    data = blob[12 + mlen:]
    out = {}
    for e in manifest["arrays"]:
        start, n = e["offset"], e["nbytes"]
        if start + n > len(data):
            raise FormatError(f"{e['name']}: expected {n} bytes at offset {start}, file has {len(data) - start}")
        arr = np.frombuffer(data[start:start + n], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        out[e["name"]] = arr.astype(e["dtype"])
    return out
