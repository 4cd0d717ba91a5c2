"""Checkpoint container: a JSON manifest followed by raw little-endian buffers.

Layout::

    <manifest byte length as ASCII decimal>\\n
    <manifest: UTF-8 JSON, sorted keys>
    <buffers, concatenated in manifest order>

Each manifest entry records ``name``, ``shape``, ``dtype`` (``float32`` or
``float64``), ``offset`` (bytes from the start of the buffer section) and
``length`` (bytes).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    config: dict
    stats: dict
    rng_state: dict
    format_version: int = FORMAT_VERSION
    history: list = field(default_factory=list, compare=False, repr=False)
    val_history: list = field(default_factory=list, compare=False, repr=False)

    def manifest(self):
        entries, offset = [], 0
        for name, arr in self.params.items():
            arr = np.asarray(arr)
            dtype = arr.dtype.name
            if dtype not in _DTYPES:
                raise CheckpointError(f"{name}: unsupported dtype {dtype}")
            length = arr.size * arr.itemsize
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                            "offset": offset, "length": length})
            offset += length
        return {"format_version": self.format_version, "entries": entries, "config": self.config,
                "stats": self.stats, "rng_state": self.rng_state}


def to_bytes(ckpt: Checkpoint) -> bytes:
    manifest = json.dumps(ckpt.manifest(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buffers = b"".join(
        np.ascontiguousarray(arr, dtype=_DTYPES[np.asarray(arr).dtype.name]).tobytes()
        for arr in ckpt.params.values()
    )
    return str(len(manifest)).encode("ascii") + b"\n" + manifest + buffers


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def from_bytes(raw: bytes) -> Checkpoint:
    head, sep, rest = raw.partition(b"\n")
    if not sep or not head.isdigit():
        raise CheckpointError("not a checkpoint: missing manifest length header")
    size = int(head)
    if len(rest) < size:
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(rest[:size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    data = rest[size:]
    params = {}
    for entry in manifest["entries"]:
        name, dtype = entry["name"], entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {dtype}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        expected = count * np.dtype(_DTYPES[dtype]).itemsize
        start, length = entry["offset"], entry["length"]
        if length != expected:
            raise CheckpointError(f"{name}: manifest length {length} does not match shape {entry['shape']}")
        if start < 0 or start + length > len(data):
            raise CheckpointError(f"{name}: buffer truncated (needs bytes {start}..{start + length}, have {len(data)})")
        arr = np.frombuffer(data, dtype=_DTYPES[dtype], count=count, offset=start)
        params[name] = arr.reshape(entry["shape"]).astype(dtype)
    return Checkpoint(params, manifest["config"], manifest["stats"], manifest["rng_state"], version)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
