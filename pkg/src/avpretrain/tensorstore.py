"""Raw-array tensor store: one little-endian float32 blob plus a JSON manifest.

Layout of a store directory:
  data.f32       concatenated C-order float32 little-endian tensor bytes
  manifest.json  {"format": "raw-f32-le", "version": 1,
                  "tensors": [{"name", "shape", "dtype", "offset", "nbytes"}, ...],
                  "extra": {...}}

The manifest is deterministic (sorted keys, no timestamps) so that a
save -> load -> save round trip is byte-identical. Writes go to temporary
names and are renamed into place, so an interrupted write never leaves a
readable-but-partial store behind.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "raw-f32-le"
FORMAT_VERSION = 1
DATA_FILE = "data.f32"
MANIFEST_FILE = "manifest.json"


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def write_tensors(directory: str | Path, tensors: dict[str, np.ndarray],
                  extra: dict | None = None) -> None:
    """Persist named tensors (stored in the given order) plus extra metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        raw = data.tobytes()
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "tensors": entries,
        "extra": extra or {},
    }
    _atomic_write_bytes(directory / DATA_FILE, b"".join(chunks))
    payload = json.dumps(manifest, sort_keys=True, indent=1).encode()
    _atomic_write_bytes(directory / MANIFEST_FILE, payload)


def read_manifest(directory: str | Path) -> dict:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no tensor store manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"unsupported tensor store format: {manifest.get('format')!r}")
    return manifest


def read_tensors(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Load all tensors and the extra metadata from a store directory."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    blob = (directory / DATA_FILE).read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        stop = start + entry["nbytes"]
        flat = np.frombuffer(blob[start:stop], dtype="<f4")
        tensors[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return tensors, manifest.get("extra", {})
