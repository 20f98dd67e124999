"""Checkpoints: ``manifest.json`` (name -> shape, offset) + ``params.bin`` (little-endian float64)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_checkpoint(directory, params: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    chunks = []
    for name in params:
        arr = params[name]
        arr = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f8")
        entries[name] = {"shape": list(arr.shape), "offset": offset, "count": int(arr.size)}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    (directory / BLOB).write_bytes(b"".join(chunks))
    manifest = {"dtype": "<f8", "blob": BLOB, "params": entries, "meta": meta or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    blob = (directory / manifest.get("blob", BLOB)).read_bytes()
    out = {}
    for name, entry in manifest["params"].items():
        arr = np.frombuffer(blob, dtype="<f8", count=entry["count"], offset=entry["offset"])
        out[name] = arr.reshape(entry["shape"]).astype(np.float64)
    return out, manifest.get("meta", {})
