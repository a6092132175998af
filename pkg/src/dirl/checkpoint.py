"""Versioned binary checkpoints: JSON header (kind + config + tensor table)
followed by named float32 little-endian parameter tensors."""

import json
import struct
from typing import Dict, Tuple

import numpy as np

CHECKPOINT_MAGIC = b"DIRLCKP1"


def save_checkpoint(path, kind: str, config: dict, tensors: Dict[str, np.ndarray]) -> None:
    names = list(tensors.keys())
    # np.require keeps 0-d shapes where ascontiguousarray would promote to 1-d
    arrays = [np.require(np.asarray(tensors[n], dtype=np.float32), requirements="C") for n in names]
    header = {
        "kind": kind,
        "config": config,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 4), dtype="<f4", count=count)
            tensors[entry["name"]] = data.reshape(shape).copy()
    return header["kind"], header["config"], tensors
