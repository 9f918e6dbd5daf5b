"""Boundary to external text/image encoders and embedding persistence.

The binary embedding file layout (all integers little-endian):

    magic    8 bytes  b"GUINGEMB"
    version  u32      currently 1
    dim      u32
    count    u64
    then `count` records of:
        id_len   u16
        id       id_len bytes, UTF-8
        values   dim * f32

Every vector handed out by this module has unit L2 norm. A deterministic
stub encoder is provided so search and service paths can run fully offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from typing import BinaryIO, Protocol

import httpx
import numpy as np

from .core import EmbeddingVector, Modality, l2_normalize
from .errors import (
    BadMagic,
    BadVersion,
    DuplicateId,
    EncoderUnreachable,
    MixedDimensions,
    NonFiniteVector,
    Truncated,
)

logger = logging.getLogger(__name__)

MAGIC = b"GUINGEMB"
VERSION = 1

_HEADER = struct.Struct("<8sIIQ")
_ID_LEN = struct.Struct("<H")

# Norm drift beyond this is silently fixed; beyond _WARN_NORM_TOL it is
# also counted and reported, since it points at a sloppy producer.
_FIX_NORM_TOL = 1e-6
_WARN_NORM_TOL = 1e-4


def write_embeddings_to(fh: BinaryIO, vectors: list[tuple[str, EmbeddingVector]]) -> None:
    """Stream-level writer; index snapshots embed this exact byte layout."""
    dims = {v.dim for _, v in vectors}
    if len(dims) > 1:
        raise MixedDimensions(f"embeddings carry multiple dims: {sorted(dims)}")
    ids = [i for i, _ in vectors]
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"duplicate embedding id {dup!r}")
    dim = dims.pop() if dims else 0
    fh.write(_HEADER.pack(MAGIC, VERSION, dim, len(vectors)))
    for vec_id, vec in vectors:
        raw = vec_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long: {len(raw)} bytes")
        fh.write(_ID_LEN.pack(len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(vec.values, dtype="<f4").tobytes())


def write_embeddings(vectors: list[tuple[str, EmbeddingVector]], path) -> None:
    """Write (id, vector) pairs; round-trips bit-exactly through read_embeddings."""
    with open(path, "wb") as fh:
        write_embeddings_to(fh, vectors)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise Truncated(f"file ended reading {what} ({len(buf)}/{n} bytes)")
    return buf


def read_embeddings_from(fh: BinaryIO, modality: Modality = Modality.IMAGE,
                         origin: str = "<stream>") -> list[tuple[str, EmbeddingVector]]:
    """Stream-level reader, preserving record order.

    Vectors whose stored norm drifted from 1 are re-normalized; drifts
    beyond 1e-4 are counted and logged as a warning.
    """
    out: list[tuple[str, EmbeddingVector]] = []
    warn_count = 0
    magic, version, dim, count = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    for rec in range(count):
        (id_len,) = _ID_LEN.unpack(_read_exact(fh, _ID_LEN.size, f"record {rec} id length"))
        vec_id = _read_exact(fh, id_len, f"record {rec} id").decode("utf-8")
        raw = _read_exact(fh, dim * 4, f"record {rec} payload")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        if not np.all(np.isfinite(values)):
            raise NonFiniteVector(f"record {rec} ({vec_id!r}) contains non-finite values")
        drift = abs(float(np.linalg.norm(values.astype(np.float64))) - 1.0)
        if drift > _WARN_NORM_TOL:
            warn_count += 1
        if drift > _FIX_NORM_TOL:
            values = l2_normalize(values)
        out.append((vec_id, EmbeddingVector(values=values, modality=modality)))
    if warn_count:
        logger.warning("re-normalized %d vectors with norm drift > %g in %s", warn_count, _WARN_NORM_TOL, origin)
    return out


def read_embeddings(path, modality: Modality = Modality.IMAGE) -> list[tuple[str, EmbeddingVector]]:
    """Read an embedding file written by write_embeddings."""
    with open(path, "rb") as fh:
        return read_embeddings_from(fh, modality=modality, origin=str(path))


def read_embeddings_jsonl(path, modality: Modality = Modality.IMAGE) -> list[tuple[str, EmbeddingVector]]:
    """Read {"id": ..., "v": [...]} lines; vectors are normalized on ingest."""
    out: list[tuple[str, EmbeddingVector]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            vec_id = obj["id"]
            if vec_id in seen:
                raise DuplicateId(f"duplicate embedding id {vec_id!r}")
            seen.add(vec_id)
            out.append((vec_id, EmbeddingVector.from_raw(obj["v"], modality=modality)))
    return out


def load_embeddings(path, modality: Modality = Modality.IMAGE) -> list[tuple[str, EmbeddingVector]]:
    """Dispatch on content: binary embedding file or JSONL import."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_embeddings(path, modality=modality)
    return read_embeddings_jsonl(path, modality=modality)


def stub_encode(text_or_id: str, dim: int = 512, seed: int = 0,
                modality: Modality = Modality.TEXT) -> EmbeddingVector:
    """Deterministic unit vector derived from a seeded hash of the input.

    Identical (input, dim, seed) always yields the identical vector; on a
    sphere of dimension >= 2 distinct inputs are near-orthogonal with high
    probability, which is what tests and offline demos need.
    """
    if dim < 2:
        raise ValueError(f"stub encoder needs dim >= 2, got {dim}")
    digest = hashlib.sha256(seed.to_bytes(8, "little") + text_or_id.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    return EmbeddingVector.from_raw(rng.standard_normal(dim), modality=modality)


class EncoderClient(Protocol):
    """Encoder boundary; the gateway normalizes outputs regardless of source."""

    @property
    def dim(self) -> int: ...

    def encode_text(self, text: str) -> EmbeddingVector: ...

    def encode_image(self, image_ref: str) -> EmbeddingVector: ...


class StubEncoderClient:
    """In-process deterministic encoder; the offline/test implementation."""

    def __init__(self, dim: int = 512, seed: int = 0):
        self._dim = dim
        self._seed = seed

    @property
    def dim(self) -> int:
        return self._dim

    def encode_text(self, text: str) -> EmbeddingVector:
        return stub_encode(text, dim=self._dim, seed=self._seed, modality=Modality.TEXT)

    def encode_image(self, image_ref: str) -> EmbeddingVector:
        return stub_encode(image_ref, dim=self._dim, seed=self._seed, modality=Modality.IMAGE)


class HttpEncoderClient:
    """Client for the encoder sidecar: POST /encode on a local server.

    Request  {"modality": "text"|"image", "payload": <string>}
    Response {"dim": <int>, "values": [<float>, ...]}
    """

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(timeout=timeout)
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise EncoderUnreachable("dim unknown before the first successful encode")
        return self._dim

    def _encode(self, modality: str, payload: str) -> EmbeddingVector:
        try:
            resp = self._client.post(
                f"{self.base_url}/encode",
                json={"modality": modality, "payload": payload},
            )
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise EncoderUnreachable(f"encoder sidecar at {self.base_url}: {exc}") from exc
        values = body.get("values")
        if not isinstance(values, list) or not values:
            raise EncoderUnreachable(f"encoder sidecar returned malformed payload: {body!r}")
        self._dim = int(body.get("dim", len(values)))
        return EmbeddingVector.from_raw(values, modality=Modality(modality))

    def encode_text(self, text: str) -> EmbeddingVector:
        return self._encode("text", text)

    def encode_image(self, image_ref: str) -> EmbeddingVector:
        return self._encode("image", image_ref)
