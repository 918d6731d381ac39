"""Binary checkpoint container.

Layout: magic ``SRCK``, u32 format version, u64 header length, UTF-8 JSON
header, then the concatenated little-endian tensor payloads. The header
carries named entries (name, shape, dtype, offset) plus arbitrary JSON
metadata (model config, schedule counters, optimizer step). Writing is
byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

MAGIC = b"SRCK"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict, kind: str) -> None:
    """Write named tensors plus JSON metadata to ``path``."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise DataError(f"unsupported checkpoint dtype {dtype} for {name!r}")
        raw = arr.astype(_DTYPES[dtype]).tobytes(order="C")
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta, "entries": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Read a checkpoint; returns (tensors, meta, kind)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(4) != MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: corrupt header: {exc}") from None
        payload = fh.read()
    tensors = {}
    for entry in header["entries"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise ParseError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(payload[lo:hi], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return tensors, header["meta"], header["kind"]
