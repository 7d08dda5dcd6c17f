"""Binary container for named arrays.

Layout::

    b"UTAW"                     4-byte magic
    uint32 little-endian        format version
    uint64 little-endian        header length N
    N bytes                     UTF-8 JSON header
    payload                     raw C-order array bytes, concatenated

The header holds ``{"meta": {...}, "arrays": [{"name", "dtype", "shape",
"offset", "nbytes"}, ...]}``.  Arrays are written in insertion order and
the JSON is dumped with sorted keys, so saving the same content twice gives
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"UTAW"
VERSION = 1


class WeightFileError(IOError):
    pass


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise WeightFileError(f"weight file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a weight container")
    try:
        version, hlen = struct.unpack_from("<IQ", blob, 4)
        if version > VERSION:
            raise WeightFileError(f"{path}: unsupported version {version}")
        start = 16
        header = json.loads(blob[start:start + hlen])
        base = start + hlen
        arrays = {}
        for e in header["arrays"]:
            lo = base + e["offset"]
            buf = blob[lo:lo + e["nbytes"]]
            if len(buf) != e["nbytes"]:
                raise WeightFileError(f"{path}: truncated array {e['name']}")
            arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    except (struct.error, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise WeightFileError(f"{path}: corrupt weight container ({exc})") from exc
    return arrays, header["meta"]
