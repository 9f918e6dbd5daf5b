"""Shared synthetic-task builders used by unit and acceptance tests.

Everything here is seeded; the same arguments always produce the same data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def concept_task(seed: int = 0, n_concepts: int = 64, per_concept: int = 40,
                 latent: int = 32, img_in: int = 48, txt_in: int = 40,
                 noise: float = 0.1):
    """Paired features that are two linear views of shared latent concepts.

    Returns (image_features, text_features, train_pairs, held_out) where
    held_out holds exactly one (image_row, text_row, concept) per concept,
    never used in training.
    """
    rng = np.random.default_rng(seed)
    anchors = rng.standard_normal((n_concepts, latent))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    img_view = rng.standard_normal((img_in, latent)) / np.sqrt(latent)
    txt_view = rng.standard_normal((txt_in, latent)) / np.sqrt(latent)
    img_feats, txt_feats, pairs, held = [], [], [], []
    row = 0
    for c in range(n_concepts):
        for s in range(per_concept):
            z = anchors[c]
            img_feats.append(img_view @ z + noise * rng.standard_normal(img_in))
            txt_feats.append(txt_view @ z + noise * rng.standard_normal(txt_in))
            if s == per_concept - 1:
                held.append((row, row, c))
            else:
                pairs.append((row, row))
            row += 1
    return np.array(img_feats), np.array(txt_feats), pairs, held


def sketch_task(seed: int = 0, n: int = 500, dim: int = 32, sk_in: int = 40,
                noise: float = 0.15):
    """Unit screenshot embeddings plus sketch features that are a noisy
    linear transform of them. Returns (screenshot_embs, sketch_features)."""
    rng = np.random.default_rng(seed)
    shots = rng.standard_normal((n, dim))
    shots /= np.linalg.norm(shots, axis=1, keepdims=True)
    view = rng.standard_normal((sk_in, dim)) / np.sqrt(dim)
    sketches = shots @ view.T + noise * rng.standard_normal((n, sk_in))
    return shots, sketches


def clustered_repo(seed: int = 0, n: int = 10_000, dim: int = 64,
                   n_clusters: int = 64, spread: float = 0.18, n_queries: int = 100):
    """Vectors drawn around unit cluster centers, plus queries from the
    same distribution. Returns (points, queries)."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assign = rng.integers(n_clusters, size=n)
    points = centers[assign] + spread * rng.standard_normal((n, dim))
    queries = centers[rng.integers(n_clusters, size=n_queries)] \
        + spread * rng.standard_normal((n_queries, dim))
    return points, queries


@dataclass(frozen=True)
class PipelineFixture:
    root: Path
    manifest: Path
    probs: Path
    boxes: Path
    ocr: Path
    expected_stage_counts: dict
    expected_route_counts: dict
    expected_screen_repo: int
    expected_scap_repo: int


def build_pipeline_fixture(root: Path) -> PipelineFixture:
    """1000-entry manifest with planted outcomes at every stage.

    150 aspect violations; 270 byte-duplicates of kept entries; of the 580
    unique survivors 150 route to screenshot, 250 to surrounded screenshot,
    100 to irrelevant, 80 stay under threshold. All 250 surrounded entries
    carry a detector box. Captions: 40 empty, 30 non-English, 25 per-app
    duplicates, leaving 155.
    """
    rng = np.random.default_rng(20_240_817)
    root = Path(root)
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)

    shot_box = {"x_min": 100.0, "y_min": 200.0, "x_max": 980.0, "y_max": 1800.0}

    def caption_boxes(text_a: str, text_b: str) -> list[dict]:
        # two caption fragments above the screenshot, one decoy inside it
        return [
            {"x_min": 100.0, "y_min": 20.0, "x_max": 480.0, "y_max": 90.0,
             "text": text_a, "confidence": 0.98},
            {"x_min": 500.0, "y_min": 20.0, "x_max": 900.0, "y_max": 90.0,
             "text": text_b, "confidence": 0.97},
            {"x_min": 150.0, "y_min": 250.0, "x_max": 700.0, "y_max": 350.0,
             "text": "Get it on the store", "confidence": 0.9},
        ]

    probs_table = {
        "screenshot": {"screenshot": 0.95, "surrounded_screenshot": 0.03, "irrelevant": 0.02},
        "surrounded": {"screenshot": 0.05, "surrounded_screenshot": 0.92, "irrelevant": 0.03},
        "irrelevant": {"screenshot": 0.01, "surrounded_screenshot": 0.02, "irrelevant": 0.97},
        "unrouted": {"screenshot": 0.5, "surrounded_screenshot": 0.3, "irrelevant": 0.2},
    }

    entries: list[dict] = []   # manifest rows, in manifest order
    probs_rows: list[dict] = []
    boxes_rows: list[dict] = []
    ocr_rows: list[dict] = []

    def write_image(entry_id: str, payload: bytes) -> str:
        (images / f"{entry_id}.bin").write_bytes(payload)
        return f"images/{entry_id}.bin"

    # 580 unique portrait originals, creation order:
    # orig-0000..0149 screenshot, orig-0150..0399 surrounded,
    # orig-0400..0499 irrelevant, orig-0500..0579 unrouted.
    kinds = ["screenshot"] * 150 + ["surrounded"] * 250 + ["irrelevant"] * 100 + ["unrouted"] * 80
    for i, kind in enumerate(kinds):
        entry_id = f"orig-{i:04d}"
        if kind == "surrounded":
            j = i - 150
            # 5 surrounded entries per app; duplicate-caption pairs
            # (j=200,201), (202,203), ... must share an app, so pin the odd
            # member of each pair to its partner's app
            app_j = j - 1 if (j >= 200 and j % 2 == 1) else j
            app_id = f"app-s{app_j // 5:03d}"
        else:
            app_id = f"app-p{i % 30:02d}"
        entries.append({"entry_id": entry_id, "app_id": app_id,
                        "file_ref": write_image(entry_id, f"payload-{i:04d}".encode()),
                        "width_px": 1080, "height_px": 1920})
        probs_rows.append({"entry_id": entry_id, "probs": probs_table[kind]})
        if kind != "surrounded":
            continue
        j = i - 150
        boxes_rows.append({"entry_id": entry_id, "box": shot_box})
        if j < 40:
            # empty caption: even j has only a box inside the screenshot,
            # odd j has no OCR row at all
            if j % 2 == 0:
                ocr_rows.append({"entry_id": entry_id, "boxes": [
                    {"x_min": 200.0, "y_min": 300.0, "x_max": 800.0, "y_max": 900.0,
                     "text": "INSIDE TEXT", "confidence": 0.9}]})
        elif j < 70:
            ocr_rows.append({"entry_id": entry_id, "boxes": [
                {"x_min": 100.0, "y_min": 20.0, "x_max": 600.0, "y_max": 90.0,
                 "text": "Приложение для сна", "confidence": 0.95}]})
        elif j in (70, 150):
            # identical caption in two different apps: both must survive
            ocr_rows.append({"entry_id": entry_id,
                             "boxes": caption_boxes("Sync across", "all devices")})
        elif j >= 200 and j % 2 == 1:
            # second member of a per-app duplicate pair
            ocr_rows.append({"entry_id": entry_id,
                             "boxes": caption_boxes("Track habit", f"{j - 1:03d} daily")})
        else:
            ocr_rows.append({"entry_id": entry_id,
                             "boxes": caption_boxes("Track habit", f"{j:03d} daily")})

    # 270 duplicates of the first 270 originals, each inserted after its twin
    positions = {e["entry_id"]: pos for pos, e in enumerate(entries)}
    for d in range(270):
        twin_id = f"orig-{d:04d}"
        twin = entries[positions[twin_id]]
        dup_id = f"dup-{d:04d}"
        payload = (images / f"{twin_id}.bin").read_bytes()
        dup = dict(twin, entry_id=dup_id, file_ref=write_image(dup_id, payload))
        insert_at = int(rng.integers(positions[twin_id] + 1, len(entries) + 1))
        entries.insert(insert_at, dup)
        positions = {e["entry_id"]: pos for pos, e in enumerate(entries)}

    # 150 aspect violations sprinkled anywhere (landscape and square)
    for v in range(150):
        width, height = (1920, 1080) if v % 2 == 0 else (700, 700)
        entry_id = f"ratio-{v:04d}"
        entry = {"entry_id": entry_id, "app_id": f"app-r{v % 10:02d}",
                 "file_ref": write_image(entry_id, f"ratio-payload-{v:04d}".encode()),
                 "width_px": width, "height_px": height}
        entries.insert(int(rng.integers(0, len(entries) + 1)), entry)

    def dump(path: Path, rows: list[dict]) -> Path:
        with open(path, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        return path

    return PipelineFixture(
        root=root,
        manifest=dump(root / "manifest.jsonl", entries),
        probs=dump(root / "probs.jsonl", probs_rows),
        boxes=dump(root / "boxes.jsonl", boxes_rows),
        ocr=dump(root / "ocr.jsonl", ocr_rows),
        expected_stage_counts={
            "aspect_ratio": (1000, 850, 150),
            "dedup": (850, 580, 270),
            "route": (580, 400, 180),
            "detect": (250, 250, 0),
            "caption_nonempty": (250, 210, 40),
            "caption_english": (210, 180, 30),
            "caption_dedup_per_app": (180, 155, 25),
        },
        expected_route_counts={
            "screenshot": 150, "surrounded_screenshot": 250,
            "irrelevant": 100, "unrouted": 80,
        },
        expected_screen_repo=400,
        expected_scap_repo=155,
    )
