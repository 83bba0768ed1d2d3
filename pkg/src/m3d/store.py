"""Versioned array containers used for fitted-model serialization."""

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_arrays(path, arrays: dict, meta: dict) -> None:
    """Write float arrays as little-endian float64 in row-major order, plus a JSON header."""
    payload = {k: np.ascontiguousarray(np.asarray(v, dtype="<f8")) for k, v in arrays.items()}
    header = dict(meta, format_version=FORMAT_VERSION)
    payload["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path):
    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(npz["__meta__"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {meta.get('format_version')}")
        arrays = {k: npz[k].astype(np.float64) for k in npz.files if k != "__meta__"}
    return arrays, meta
