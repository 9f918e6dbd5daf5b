"""Domain types and elementary vector/geometry math shared by all modules.

Conventions: math runs in float64, vector payloads are stored as float32.
All types here are immutable after construction and safe to share across
threads. Pixel data never enters this module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BoxOutOfBounds, DimensionMismatch, ZeroVector

DEFAULT_DIM = 512

_HASH_RE = re.compile(r"^[0-9a-f]{40}$")


class Modality(str, Enum):
    IMAGE = "image"
    TEXT = "text"
    SKETCH = "sketch"


class Source(str, Enum):
    SCAP_REPO = "scap_repo"
    SCREEN_REPO = "screen_repo"
    RICO = "rico"
    REDRAW = "redraw"
    SYNTHETIC = "synthetic"


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, preserving direction.

    Computation is float64; the result is returned as float32 (the storage
    dtype used throughout). Raises :class:`ZeroVector` when the norm is
    numerically zero (< 1e-12).
    """
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ZeroVector("cannot normalize a zero vector")
    return (arr / norm).astype(np.float32)


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm float vector with a provenance tag.

    ``values`` is a read-only float32 array; use :meth:`from_raw` to build
    one from arbitrary floats (normalizes first).
    """

    values: np.ndarray
    modality: Modality

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionMismatch("embedding must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ZeroVector("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise ZeroVector(f"embedding norm {norm!r} deviates from 1 by more than 1e-6")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_raw(cls, v, modality: Modality = Modality.IMAGE) -> "EmbeddingVector":
        return cls(values=l2_normalize(v), modality=modality)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product of two unit vectors, clipped to [-1, 1]."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    dot = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return max(-1.0, min(1.0, dot))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle; coordinates may be fractional."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxOutOfBounds(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def intersection_area(self, other: "BoundingBox") -> float:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when disjoint, 1 when identical."""
    inter = a.intersection_area(b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class OcrBox:
    """One recognized text region."""

    box: BoundingBox
    text: str
    confidence: float

    def __post_init__(self):
        if not self.text:
            raise ValueError("OCR text must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ScreenshotRecord:
    """One screenshot's identity, provenance, geometry and optional caption."""

    id: str
    app_id: str
    source: Source
    image_ref: str
    content_hash: str
    width_px: int
    height_px: int
    caption: str | None = None

    def __post_init__(self):
        if not _HASH_RE.match(self.content_hash):
            raise ValueError(f"content_hash must be 40 lowercase hex chars, got {self.content_hash!r}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"dimensions must be positive, got {self.width_px}x{self.height_px}")

    def to_json_dict(self) -> dict:
        d = {
            "id": self.id,
            "app_id": self.app_id,
            "source": self.source.value,
            "image_ref": self.image_ref,
            "content_hash": self.content_hash,
            "width_px": self.width_px,
            "height_px": self.height_px,
        }
        if self.caption is not None:
            d["caption"] = self.caption
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScreenshotRecord":
        return cls(
            id=d["id"],
            app_id=d["app_id"],
            source=Source(d["source"]),
            image_ref=d["image_ref"],
            content_hash=d["content_hash"],
            width_px=int(d["width_px"]),
            height_px=int(d["height_px"]),
            caption=d.get("caption"),
        )
