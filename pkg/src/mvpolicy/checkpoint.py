"""Versioned binary checkpoint container.

Layout (little-endian, documented bit-exactly in docs/format.md):

    magic  b"MVCK"
    u32    container version (currently 1)
    u64    header length in bytes
    bytes  UTF-8 JSON header: {"kind", "step", "configs", "extra",
           "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    bytes  raw tensor data, concatenated in header order

Tensor offsets are relative to the start of the data region. The header JSON
is serialized with sorted keys and no whitespace so identical state produces
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MVCK"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or wrong-version checkpoint file."""


@dataclass
class Checkpoint:
    kind: str
    step: int
    configs: dict
    tensors: dict  # name -> np.ndarray
    extra: dict


def save_checkpoint(path, kind: str, step: int, configs: dict, tensors: dict, extra: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str.lstrip("=|<"),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": kind,
        "step": int(step),
        "configs": configs,
        "extra": extra or {},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(VERSION).tobytes())
        f.write(np.uint64(len(header_bytes)).tobytes())
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version = int(np.frombuffer(data[4:8], dtype=np.uint32)[0])
    if version != VERSION:
        raise CheckpointError(f"{path}: container version {version}, reader supports {VERSION}")
    header_len = int(np.frombuffer(data[8:16], dtype=np.uint64)[0])
    header_end = 16 + header_len
    if len(data) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[16:header_end].decode("utf-8"))
    body = data[header_end:]
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(body[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return Checkpoint(
        kind=header["kind"],
        step=header["step"],
        configs=header["configs"],
        tensors=tensors,
        extra=header.get("extra", {}),
    )
