"""Writers for the OTDF feature format and its sidecar files.

Independent implementation of the public wire format consumed by the
detection pipeline: 31-byte little-endian header (magic ``OTDF``, u32
version 1, u64 rows, u64 dim, u8 dtype code 1, six zero bytes) followed
by row-major float32 data. Sidecars: one label per line in
``<stem>.labels.txt``, view manifests in ``<stem>.manifest.json``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4sIQQB6s")
MAGIC = b"OTDF"
VERSION = 1
DTYPE_FLOAT32 = 1


def write_matrix(data: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"feature matrix must be 2-D and nonempty, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("feature matrix contains NaN or infinite entries")
    header = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1], DTYPE_FLOAT32, b"\0" * 6)
    Path(path).write_bytes(header + arr.tobytes())


def write_labels(names, path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def labels_sidecar(otdf_path) -> Path:
    p = Path(otdf_path)
    return p.with_name(p.stem + ".labels.txt")


def manifest_sidecar(otdf_path) -> Path:
    p = Path(otdf_path)
    return p.with_name(p.stem + ".manifest.json")


def write_manifest(n_views: int, entries, path) -> None:
    """``entries`` is an iterable of (sample_id, original_row, view_start, view_end)."""
    doc = {
        "n_views": n_views,
        "samples": [
            {"id": sid, "original_row": orig, "view_start": start, "view_end": end}
            for sid, orig, start, end in entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
