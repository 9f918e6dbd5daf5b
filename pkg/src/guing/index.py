"""Exact and approximate (IVF) cosine-similarity search over embeddings.

The IVF structure partitions the repository into Voronoi cells around
spherical k-means centroids; a query scores only the postings of the
``nprobe`` nearest cells. With ``nprobe == n_cells`` the candidate set is
the whole repository and results are identical to brute force by
construction: both paths score candidates through the same helper.

Scores are float64 dot products of unit vectors; ties are broken by
ascending id so rankings are deterministic. Centroids are quantized to
float32 when training finishes, so a freshly built index and one reloaded
from a snapshot probe identically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingVector, Modality
from .errors import (
    BadMagic,
    BadNprobe,
    BadVersion,
    DimensionMismatch,
    DuplicateId,
    EmptyInput,
    TooFewPoints,
    Truncated,
)
from . import gateway

SNAPSHOT_MAGIC = b"GUINGIDX"
SNAPSHOT_VERSION = 1

_SNAP_HEADER = struct.Struct("<8sII")
_CENTROID_HEADER = struct.Struct("<II")
_U64 = struct.Struct("<Q")

KMEANS_TOL = 1e-4


@dataclass(frozen=True)
class SearchResult:
    """Ranked (id, score) pairs, best first."""

    results: list[tuple[str, float]]
    query_echo: str | None = None
    nprobe_used: int | None = None


class ExactIndex:
    """Brute-force index: ids plus a row matrix of unit vectors."""

    def __init__(self, ids: list[str], matrix: np.ndarray):
        if len(ids) != matrix.shape[0]:
            raise DimensionMismatch("ids and matrix row count differ")
        self.ids = list(ids)
        self.matrix = matrix  # float64, rows unit-norm
        # Rank of each row's id in ascending id order, for tie-breaking.
        order = np.argsort(np.asarray(self.ids))
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_matrix(cls, ids: list[str], matrix) -> "ExactIndex":
        """Bulk constructor: rows are L2-normalized, stored via float32."""
        if len(ids) == 0:
            raise EmptyInput("cannot index zero vectors")
        if len(set(ids)) != len(ids):
            raise DuplicateId("index ids must be unique")
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(ids):
            raise DimensionMismatch(f"matrix shape {m.shape} does not match {len(ids)} ids")
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise EmptyInput("matrix contains a zero row")
        m = m / norms
        # Quantize through the storage dtype so in-memory and reloaded
        # indexes score bit-identically.
        m = m.astype(np.float32).astype(np.float64)
        return cls(ids, m)


def build_exact(embeddings: list[tuple[str, EmbeddingVector]]) -> ExactIndex:
    if not embeddings:
        raise EmptyInput("cannot index zero vectors")
    dims = {v.dim for _, v in embeddings}
    if len(dims) > 1:
        raise DimensionMismatch(f"embeddings carry multiple dims: {sorted(dims)}")
    ids = [i for i, _ in embeddings]
    if len(set(ids)) != len(ids):
        raise DuplicateId("index ids must be unique")
    matrix = np.stack([v.values for _, v in embeddings]).astype(np.float64)
    return ExactIndex(ids, matrix)


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, ExactIndex):
        return embeddings.matrix
    if isinstance(embeddings, np.ndarray):
        return np.asarray(embeddings, dtype=np.float64)
    return build_exact(embeddings).matrix


def _query_values(index: ExactIndex, query: EmbeddingVector) -> np.ndarray:
    if query.dim != index.dim:
        raise DimensionMismatch(f"query dim {query.dim} != index dim {index.dim}")
    return query.values.astype(np.float64)


def _rank_rows(index: ExactIndex, rows: np.ndarray | None, q: np.ndarray, k: int,
               query_echo: str | None, nprobe_used: int | None) -> SearchResult:
    """Score candidate rows and return the top-k by (score desc, id asc).

    ``rows=None`` means all rows. Both search paths funnel through here, so
    a full IVF probe performs the exact same arithmetic as brute force.
    """
    if rows is None:
        scores = index.matrix @ q
        ranks = index._id_rank
        row_lookup = None
    else:
        if rows.size == 0:
            return SearchResult(results=[], query_echo=query_echo, nprobe_used=nprobe_used)
        scores = index.matrix[rows] @ q
        ranks = index._id_rank[rows]
        row_lookup = rows
    order = np.lexsort((ranks, -scores))[:k]
    if row_lookup is not None:
        order = row_lookup[order]
        picked_scores = index.matrix[order] @ q
    else:
        picked_scores = scores[order]
    results = [(index.ids[int(r)], float(s)) for r, s in zip(order, picked_scores)]
    return SearchResult(results=results, query_echo=query_echo, nprobe_used=nprobe_used)


def search_exact(index: ExactIndex, query: EmbeddingVector, k: int,
                 query_echo: str | None = None) -> SearchResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _query_values(index, query)
    return _rank_rows(index, None, q, k, query_echo, None)


def kmeans(embeddings, n_cells: int, max_iters: int = 25, seed: int = 0) -> np.ndarray:
    """Spherical k-means: k-means++ init, Lloyd steps, centroids re-unit-normed.

    Stops after ``max_iters`` or when the largest centroid displacement in
    an iteration falls below 1e-4. Deterministic for a fixed seed. Returned
    centroids are float64 values exactly representable in float32.
    """
    x = _as_matrix(embeddings)
    count = x.shape[0]
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if n_cells > count:
        raise TooFewPoints(f"{count} points cannot seed {n_cells} cells")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")

    rng = np.random.default_rng(seed)

    # k-means++ seeding on squared Euclidean distance (monotone in cosine
    # for unit vectors). ||x - c||^2 expands to a matvec, avoiding a full
    # count x dim temporary per candidate.
    row_sq = np.einsum("ij,ij->i", x, x)

    def dist_sq_to(row: int) -> np.ndarray:
        return np.maximum(row_sq + row_sq[row] - 2.0 * (x @ x[row]), 0.0)

    chosen = np.empty(n_cells, dtype=np.int64)
    chosen[0] = rng.integers(count)
    d2 = dist_sq_to(chosen[0])
    for j in range(1, n_cells):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on already-chosen points (duplicates);
            # fall back to the lowest-index unchosen row.
            mask = np.ones(count, dtype=bool)
            mask[chosen[:j]] = False
            chosen[j] = int(np.flatnonzero(mask)[0])
        else:
            chosen[j] = rng.choice(count, p=d2 / total)
        d2 = np.minimum(d2, dist_sq_to(chosen[j]))

    centroids = x[chosen].copy()
    for _ in range(max_iters):
        assign = np.argmax(x @ centroids.T, axis=1)
        # Segment-sum per cell: sort rows by assignment, then reduce each
        # contiguous run (much faster than scattered adds at repo scale).
        order = np.argsort(assign, kind="stable")
        sorted_assign = assign[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_assign)) + 1))
        sums = np.zeros_like(centroids)
        sums[sorted_assign[starts]] = np.add.reduceat(x[order], starts, axis=0)
        norms = np.linalg.norm(sums, axis=1)
        fresh = centroids.copy()
        ok = norms > 1e-12  # empty or perfectly cancelling cells keep their centroid
        fresh[ok] = sums[ok] / norms[ok, None]
        shift = float(np.max(np.linalg.norm(fresh - centroids, axis=1)))
        centroids = fresh
        if shift < KMEANS_TOL:
            break
    return centroids.astype(np.float32).astype(np.float64)


class IvfIndex:
    """Voronoi-cell index: centroids plus per-cell posting lists of row indices."""

    def __init__(self, base: ExactIndex, centroids: np.ndarray,
                 cells: list[np.ndarray], trained_on: int):
        self.base = base
        self.centroids = centroids
        self.cells = cells
        self.trained_on = trained_on

    @property
    def n_cells(self) -> int:
        return self.centroids.shape[0]

    @property
    def ids(self) -> list[str]:
        return self.base.ids

    @property
    def count(self) -> int:
        return self.base.count

    @property
    def dim(self) -> int:
        return self.base.dim


def build_ivf(embeddings, centroids: np.ndarray) -> IvfIndex:
    """Assign every vector to its argmax-cosine centroid (tie: lowest cell)."""
    base = embeddings if isinstance(embeddings, ExactIndex) else build_exact(embeddings)
    cents = np.asarray(centroids, dtype=np.float64)
    if cents.ndim != 2 or cents.shape[1] != base.dim:
        raise DimensionMismatch(f"centroid dim {cents.shape} does not match index dim {base.dim}")
    assign = np.argmax(base.matrix @ cents.T, axis=1)  # np.argmax takes the lowest index on ties
    cells = [np.flatnonzero(assign == c).astype(np.int64) for c in range(cents.shape[0])]
    return IvfIndex(base=base, centroids=cents, cells=cells, trained_on=base.count)


def search_ivf(index: IvfIndex, query: EmbeddingVector, k: int, nprobe: int,
               query_echo: str | None = None) -> SearchResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (1 <= nprobe <= index.n_cells):
        raise BadNprobe(f"nprobe {nprobe} outside [1, {index.n_cells}]")
    q = _query_values(index.base, query)
    cent_scores = index.centroids @ q
    probe_order = np.lexsort((np.arange(index.n_cells), -cent_scores))[:nprobe]
    candidates = (
        np.sort(np.concatenate([index.cells[int(c)] for c in probe_order]))
        if nprobe < index.n_cells
        else None  # full probe covers every row: score like brute force
    )
    if candidates is not None and candidates.size == index.count:
        candidates = None
    return _rank_rows(index.base, candidates, q, k, query_echo, nprobe)


def default_ivf_params(count: int) -> tuple[int, int]:
    """(n_cells, nprobe) defaults: 3000/1000 at repository scale, sqrt rule below."""
    if count >= 100_000:
        return 3000, 1000
    n_cells = max(1, math.ceil(math.sqrt(count)))
    return n_cells, max(1, math.ceil(n_cells / 3))


def save_index(index: ExactIndex | IvfIndex, path) -> None:
    """Snapshot: header, then an embedding-file section, then (for IVF)
    a centroid section and a posting-list section. See docs/formats.md."""
    has_ivf = isinstance(index, IvfIndex)
    base = index.base if has_ivf else index
    vectors = [
        (base.ids[i], EmbeddingVector(values=base.matrix[i].astype(np.float32), modality=Modality.IMAGE))
        for i in range(base.count)
    ]
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, 1 if has_ivf else 0))
        gateway.write_embeddings_to(fh, vectors)
        if has_ivf:
            fh.write(_CENTROID_HEADER.pack(index.n_cells, index.dim))
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            for cell in index.cells:
                fh.write(_U64.pack(len(cell)))
                fh.write(np.ascontiguousarray(cell, dtype="<u8").tobytes())


def load_index(path) -> ExactIndex | IvfIndex:
    with open(path, "rb") as fh:
        header = fh.read(_SNAP_HEADER.size)
        if len(header) != _SNAP_HEADER.size:
            raise Truncated("snapshot header incomplete")
        magic, version, flags = _SNAP_HEADER.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise BadMagic(f"expected {SNAPSHOT_MAGIC!r}, found {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise BadVersion(f"unsupported snapshot version {version}")
        vectors = gateway.read_embeddings_from(fh)
        base = build_exact(vectors)
        if not flags & 1:
            return base
        raw = fh.read(_CENTROID_HEADER.size)
        if len(raw) != _CENTROID_HEADER.size:
            raise Truncated("centroid header incomplete")
        n_cells, dim = _CENTROID_HEADER.unpack(raw)
        payload = fh.read(n_cells * dim * 4)
        if len(payload) != n_cells * dim * 4:
            raise Truncated("centroid payload incomplete")
        centroids = np.frombuffer(payload, dtype="<f4").reshape(n_cells, dim).astype(np.float64)
        cells = []
        for c in range(n_cells):
            raw = fh.read(_U64.size)
            if len(raw) != _U64.size:
                raise Truncated(f"posting list {c} length incomplete")
            (length,) = _U64.unpack(raw)
            body = fh.read(length * 8)
            if len(body) != length * 8:
                raise Truncated(f"posting list {c} incomplete")
            cells.append(np.frombuffer(body, dtype="<u8").astype(np.int64))
        return IvfIndex(base=base, centroids=centroids, cells=cells, trained_on=base.count)
