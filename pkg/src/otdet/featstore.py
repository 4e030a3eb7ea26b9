"""On-disk and in-memory containers for embedding matrices.

The binary feature format (OTDF) is a fixed 31-byte little-endian header
followed by a raw row-major float32 payload:

    bytes  0-3   magic ``OTDF``
    bytes  4-7   format version, u32 (currently 1)
    bytes  8-15  row count, u64
    bytes 16-23  embedding dimension, u64
    byte  24     dtype code, u8 (1 = IEEE-754 float32)
    bytes 25-30  reserved, must be zero
    byte  31-    rows * dim float32 values, row-major

Two sidecar conventions accompany OTDF files: ``<stem>.labels.txt`` holds
one class-label string per line for text-feature files, and
``<stem>.manifest.json`` maps samples to view rows for view-bundle files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OTDF"
VERSION = 1
DTYPE_FLOAT32 = 1
DEFAULT_PROMPT_TEMPLATE = "a photo of a [CLASS]"

_HEADER = struct.Struct("<4sIQQB6s")
assert _HEADER.size == 31

UNIT_NORM_ATOL = 1e-4


class FeatureStoreError(ValueError):
    """Base class for feature-file format errors."""


class BadMagicError(FeatureStoreError):
    pass


class UnsupportedVersionError(FeatureStoreError):
    pass


class TruncatedPayloadError(FeatureStoreError):
    pass


class ManifestError(ValueError):
    """Raised when a view-bundle manifest is malformed or inconsistent."""


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable rows x dim float32 matrix of embedding vectors.

    ``normalized`` asserts that every row has unit L2 norm (within 1e-4);
    it is validated at construction time, not trusted.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"feature matrix must be at least 1x1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("feature matrix contains NaN or infinite entries")
        if self.normalized:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > UNIT_NORM_ATOL
            if bad.any():
                row = int(np.argmax(bad))
                raise ValueError(
                    f"row {row} has L2 norm {norms[row]:.6f}, expected 1 +/- {UNIT_NORM_ATOL}"
                )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def l2_normalize(m: FeatureMatrix) -> FeatureMatrix:
    """Scale every row to unit L2 norm, preserving direction.

    Zero-norm rows are a hard error: they indicate a broken feature dump,
    not a degenerate-but-valid input.
    """
    data = m.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    if (norms == 0.0).any():
        row = int(np.argmax(norms == 0.0))
        raise ValueError(f"cannot normalize zero-norm row {row}")
    return FeatureMatrix(data / norms[:, None], normalized=True)


def write_features(m: FeatureMatrix, path) -> None:
    """Write ``m`` to ``path`` in OTDF format (byte-reproducible)."""
    header = _HEADER.pack(MAGIC, VERSION, m.rows, m.dim, DTYPE_FLOAT32, b"\0" * 6)
    payload = np.ascontiguousarray(m.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_features(path) -> FeatureMatrix:
    """Read an OTDF file, validating magic, version, dtype and payload size.

    The ``normalized`` flag of the result is recomputed from the data.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the 31-byte header")
    magic, version, rows, dim, dtype, reserved = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise FeatureStoreError(f"{path}: unsupported dtype code {dtype}")
    if rows < 1 or dim < 1:
        raise FeatureStoreError(f"{path}: invalid shape {rows}x{dim}")
    expected = rows * dim * 4
    got = len(raw) - _HEADER.size
    if got < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {got} bytes, need {expected} for {rows}x{dim}"
        )
    if got > expected:
        raise FeatureStoreError(f"{path}: {got - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=_HEADER.size)
    data = data.reshape(rows, dim)
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    normalized = bool(np.abs(norms - 1.0).max() <= UNIT_NORM_ATOL)
    return FeatureMatrix(data, normalized=normalized)


@dataclass(frozen=True)
class LabelSet:
    """Ordered in-distribution class labels plus the prompt template."""

    names: tuple[str, ...]
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) < 1:
            raise ValueError("label set must contain at least one name")
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        if self.prompt_template.count("[CLASS]") != 1:
            raise ValueError("prompt template must contain exactly one [CLASS] placeholder")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def prompts(self) -> list[str]:
        return [self.prompt_template.replace("[CLASS]", n) for n in self.names]


def labels_sidecar_path(otdf_path) -> Path:
    p = Path(otdf_path)
    return p.with_name(p.stem + ".labels.txt")


def manifest_sidecar_path(otdf_path) -> Path:
    p = Path(otdf_path)
    return p.with_name(p.stem + ".manifest.json")


def write_labels(labels: LabelSet, path) -> None:
    Path(path).write_text("".join(n + "\n" for n in labels.names), encoding="utf-8")


def read_labels(path, prompt_template: str = DEFAULT_PROMPT_TEMPLATE) -> LabelSet:
    text = Path(path).read_text(encoding="utf-8")
    names = tuple(line for line in text.splitlines() if line)
    return LabelSet(names, prompt_template)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    original_row: int
    view_start: int
    view_end: int  # exclusive


@dataclass(frozen=True)
class ViewBundleManifest:
    """Maps each sample to its original-feature row and its view-row range.

    ``original_row`` indexes the companion originals matrix; the
    ``[view_start, view_end)`` range indexes the companion views matrix.
    """

    n_views: int
    samples: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.n_views < 1:
            raise ManifestError(f"n_views must be >= 1, got {self.n_views}")

    def validate(self, view_rows: int, original_rows: int | None = None) -> None:
        """Check ranges against the companion matrices; raise ManifestError."""
        spans = []
        for e in self.samples:
            if e.view_end - e.view_start != self.n_views:
                raise ManifestError(
                    f"sample {e.sample_id!r}: view range [{e.view_start}, {e.view_end}) "
                    f"has length {e.view_end - e.view_start}, expected {self.n_views}"
                )
            if e.view_start < 0 or e.view_end > view_rows:
                raise ManifestError(
                    f"sample {e.sample_id!r}: view range [{e.view_start}, {e.view_end}) "
                    f"outside views matrix with {view_rows} rows"
                )
            if original_rows is not None and not 0 <= e.original_row < original_rows:
                raise ManifestError(
                    f"sample {e.sample_id!r}: original_row {e.original_row} outside "
                    f"originals matrix with {original_rows} rows"
                )
            spans.append((e.view_start, e.view_end, e.sample_id))
        spans.sort()
        for (s0, e0, id0), (s1, e1, id1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ManifestError(
                    f"samples {id0!r} and {id1!r} have overlapping view ranges"
                )


def write_manifest(manifest: ViewBundleManifest, path) -> None:
    doc = {
        "n_views": manifest.n_views,
        "samples": [
            {
                "id": e.sample_id,
                "original_row": e.original_row,
                "view_start": e.view_start,
                "view_end": e.view_end,
            }
            for e in manifest.samples
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> ViewBundleManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    try:
        samples = tuple(
            ManifestEntry(
                sample_id=str(s["id"]),
                original_row=int(s["original_row"]),
                view_start=int(s["view_start"]),
                view_end=int(s["view_end"]),
            )
            for s in doc["samples"]
        )
        return ViewBundleManifest(n_views=int(doc["n_views"]), samples=samples)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing or malformed field: {exc}") from exc
