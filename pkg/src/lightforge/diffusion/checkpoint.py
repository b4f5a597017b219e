"""Checkpoint format: magic, header length, JSON header, raw little-endian floats.

The header records format version, the estimator config and, per tensor,
name, shape, dtype and byte offset into the blob.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"LFCK"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, state_dict: dict[str, torch.Tensor], config: dict, extra: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "config": config, "tensors": entries, "extra": extra or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict, dict]:
    """Returns (state_dict, config, extra)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n])
    if header["version"] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    blob = memoryview(data)[8 + n:]
    state = {}
    for e in header["tensors"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(e["dtype"]))
    return state, header["config"], header["extra"]
