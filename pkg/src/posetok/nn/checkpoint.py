"""Checkpoints: a JSON manifest plus a sibling ``.bin`` of raw little-endian blobs.

Manifest layout::

    {"tensors": [{"name": ..., "shape": [...], "dtype": "f32"|"f64",
                  "offset": bytes, "nbytes": bytes}, ...],
     "meta": {...}}
"""

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _paths(path):
    path = Path(path)
    if path.suffix == ".json":
        return path, path.with_suffix(".bin")
    return path.with_suffix(".json"), path.with_suffix(".bin")


def save_checkpoint(path, tensors, meta=None):
    """Write ``tensors`` (name -> array) to ``path`` (.json + .bin)."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            code = "f32" if arr.dtype == np.float32 else "f64"
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            fh.write(raw)
            entries.append(
                {"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {"tensors": entries, "blob": blob_path.name, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_checkpoint(path):
    """Return ``(tensors, meta)``."""
    manifest_path, blob_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    blob = blob_path.read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"unknown dtype {entry['dtype']!r} for tensor {entry['name']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = entry.get("offset")
        if offset is None:
            raise DataError(f"tensor {entry['name']!r} has no offset")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return tensors, manifest.get("meta", {})
