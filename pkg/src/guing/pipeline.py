"""Deterministic dataset-creation stages over app-store image manifests.

Every stage is a pure function of its inputs; classifier probabilities,
detector boxes, and OCR boxes arrive as sibling data files, never from live
models. Stage outputs preserve manifest order, so reruns (at any thread
count) emit byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .core import BoundingBox, OcrBox, ScreenshotRecord, Source
from .errors import BoxOutOfBounds

DEFAULT_RATIO_MIN = 1.3
DEFAULT_RATIO_MAX = 3.0
DEFAULT_ROUTE_THRESHOLD = 0.9

_HASH_RE_LEN = 40


@dataclass(frozen=True)
class RawImageEntry:
    entry_id: str
    app_id: str
    file_ref: str
    width_px: int
    height_px: int
    content_bytes_hash: str | None = None  # sha-1 hex, filled by compute_hashes

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"entry {self.entry_id!r} has non-positive dimensions")
        h = self.content_bytes_hash
        if h is not None and (len(h) != _HASH_RE_LEN or any(c not in "0123456789abcdef" for c in h)):
            raise ValueError(f"entry {self.entry_id!r} hash is not 40 lowercase hex chars")

    @property
    def aspect_ratio(self) -> float:
        return self.height_px / self.width_px


class RouteLabel(str, Enum):
    # Declaration order doubles as the argmax tie-break order.
    SCREENSHOT = "screenshot"
    SURROUNDED_SCREENSHOT = "surrounded_screenshot"
    IRRELEVANT = "irrelevant"
    UNROUTED = "unrouted"


_CLASS_ORDER = (RouteLabel.SCREENSHOT, RouteLabel.SURROUNDED_SCREENSHOT, RouteLabel.IRRELEVANT)


@dataclass(frozen=True)
class ClassificationResult:
    entry_id: str
    probs: dict[str, float]

    def __post_init__(self):
        expected = {label.value for label in _CLASS_ORDER}
        if set(self.probs) != expected:
            raise ValueError(f"probs keys {sorted(self.probs)} != {sorted(expected)}")
        if any(not 0.0 <= p <= 1.0 for p in self.probs.values()):
            raise ValueError(f"entry {self.entry_id!r} has probabilities outside [0, 1]")
        if abs(sum(self.probs.values()) - 1.0) > 1e-6:
            raise ValueError(f"entry {self.entry_id!r} probabilities sum to {sum(self.probs.values())}")


@dataclass(frozen=True)
class DetectionResult:
    entry_id: str
    box: BoundingBox


@dataclass(frozen=True)
class CaptionRecord:
    entry_id: str
    app_id: str
    caption: str
    language: str = "en"


@dataclass(frozen=True)
class StageReport:
    stage: str
    entered: int
    kept: int
    dropped: int

    def __post_init__(self):
        if self.entered != self.kept + self.dropped:
            raise ValueError(f"stage {self.stage}: {self.entered} != {self.kept} + {self.dropped}")


def compute_hashes(entries: list[RawImageEntry], root: str | Path = ".",
                   threads: int = 1) -> list[RawImageEntry]:
    """Fill content_bytes_hash with the SHA-1 of each file's raw bytes.

    Output order equals input order regardless of thread count.
    """
    root = Path(root)

    def digest(entry: RawImageEntry) -> RawImageEntry:
        data = (root / entry.file_ref).read_bytes()
        return replace(entry, content_bytes_hash=hashlib.sha1(data).hexdigest())

    if threads <= 1:
        return [digest(e) for e in entries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(digest, entries))


def filter_by_aspect_ratio(entries: list[RawImageEntry], min_ratio: float = DEFAULT_RATIO_MIN,
                           max_ratio: float = DEFAULT_RATIO_MAX
                           ) -> tuple[list[RawImageEntry], list[RawImageEntry]]:
    """Keep portrait-shaped entries with min_ratio <= height/width <= max_ratio."""
    if not 0.0 < min_ratio <= max_ratio:
        raise ValueError(f"bad ratio bounds [{min_ratio}, {max_ratio}]")
    kept, rejected = [], []
    for e in entries:
        (kept if min_ratio <= e.aspect_ratio <= max_ratio else rejected).append(e)
    return kept, rejected


def dedup_by_hash(entries: list[RawImageEntry]) -> list[RawImageEntry]:
    """Keep the first manifest occurrence of each content hash."""
    seen: set[str] = set()
    kept = []
    for e in entries:
        if e.content_bytes_hash is None:
            raise ValueError(f"entry {e.entry_id!r} has no content hash; run compute_hashes first")
        if e.content_bytes_hash not in seen:
            seen.add(e.content_bytes_hash)
            kept.append(e)
    return kept


def route_by_classification(result: ClassificationResult,
                            threshold: float = DEFAULT_ROUTE_THRESHOLD) -> RouteLabel:
    """Argmax class iff its probability clears the threshold, else UNROUTED.

    Threshold 0 therefore reduces to plain argmax for any positive maximum.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    best = max(_CLASS_ORDER, key=lambda label: result.probs[label.value])
    if result.probs[best.value] > threshold:
        return best
    return RouteLabel.UNROUTED


def crop_to_box(entry: RawImageEntry, det: DetectionResult) -> ScreenshotRecord:
    """Geometry-only crop: the record's size is the box extent in whole pixels.

    Pixel coordinates are half-open, so a box spanning [100, 900) is 800
    pixels wide. Bounds are checked against the source image.
    """
    box = det.box
    if box.x_min < 0 or box.y_min < 0 or box.x_max > entry.width_px or box.y_max > entry.height_px:
        raise BoxOutOfBounds(
            f"box ({box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}) exceeds "
            f"{entry.width_px}x{entry.height_px} image {entry.entry_id!r}"
        )
    width = round(box.x_max) - round(box.x_min)
    height = round(box.y_max) - round(box.y_min)
    if width <= 0 or height <= 0:
        raise BoxOutOfBounds(f"box rounds to an empty crop on entry {entry.entry_id!r}")
    return ScreenshotRecord(
        id=entry.entry_id,
        app_id=entry.app_id,
        source=Source.SCREEN_REPO,
        image_ref=entry.file_ref,
        content_hash=entry.content_bytes_hash or "0" * 40,
        width_px=width,
        height_px=height,
    )


def assemble_caption(ocr: list[OcrBox], screenshot_box: BoundingBox) -> str:
    """Join OCR texts that lie fully outside the screenshot box.

    Any box with positive intersection area is excluded. Survivors are
    sorted by position (top to bottom, then left to right; full coordinates
    and text break residual ties) so input order never matters.
    """
    survivors = [b for b in ocr if b.box.intersection_area(screenshot_box) == 0.0]
    survivors.sort(key=lambda b: (b.box.y_min, b.box.x_min, b.box.x_max, b.box.y_max, b.text))
    return " ".join(b.text for b in survivors)


def ascii_ratio_language_detector(caption: str) -> bool:
    """Stand-in English detector: at least 90% ASCII and one letter."""
    if not caption:
        return False
    ascii_count = sum(1 for c in caption if ord(c) < 128)
    return ascii_count / len(caption) >= 0.9 and any(c.isalpha() for c in caption)


def identity_spell_corrector(caption: str) -> str:
    return caption


def _postprocess_steps(records: list[CaptionRecord], lang_detector, spell_corrector
                       ) -> tuple[list[CaptionRecord], list[StageReport]]:
    reports = []

    nonempty = [r for r in records if r.caption]
    reports.append(StageReport("caption_nonempty", len(records), len(nonempty),
                               len(records) - len(nonempty)))

    english = [r for r in nonempty if lang_detector(r.caption)]
    reports.append(StageReport("caption_english", len(nonempty), len(english),
                               len(nonempty) - len(english)))

    corrected = [replace(r, caption=spell_corrector(r.caption)) for r in english]

    seen: set[tuple[str, str]] = set()
    unique = []
    for r in corrected:
        key = (r.app_id, r.caption)
        if key not in seen:
            seen.add(key)
            unique.append(r)
    reports.append(StageReport("caption_dedup_per_app", len(corrected), len(unique),
                               len(corrected) - len(unique)))
    return unique, reports


def postprocess_captions(records: list[CaptionRecord], lang_detector=None,
                         spell_corrector=None) -> list[CaptionRecord]:
    """Drop empty, drop non-English, spell-correct, dedup per app (first kept)."""
    final, _ = _postprocess_steps(
        records,
        lang_detector if lang_detector is not None else ascii_ratio_language_detector,
        spell_corrector if spell_corrector is not None else identity_spell_corrector,
    )
    return final


@dataclass
class PipelineResult:
    screen_repo: list[ScreenshotRecord]
    scap_repo: list[CaptionRecord]
    reports: list[StageReport]
    route_counts: dict[str, int]


def run_pipeline(entries: list[RawImageEntry],
                 probs: dict[str, ClassificationResult],
                 boxes: dict[str, DetectionResult],
                 ocr: dict[str, list[OcrBox]],
                 threshold: float = DEFAULT_ROUTE_THRESHOLD,
                 ratio_min: float = DEFAULT_RATIO_MIN,
                 ratio_max: float = DEFAULT_RATIO_MAX,
                 lang_detector=None,
                 spell_corrector=None) -> PipelineResult:
    """Full manifest flow: filter, dedup, route, crop, caption, postprocess.

    Entries must already carry content hashes. Plain screenshots go straight
    to the screenshot repository; surrounded screenshots are cropped to the
    detector box and contribute captions assembled from their OCR boxes.
    Entries without a classification row are unrouted; surrounded entries
    without a detector box are dropped at the crop stage.
    """
    reports: list[StageReport] = []

    kept, rejected = filter_by_aspect_ratio(entries, ratio_min, ratio_max)
    reports.append(StageReport("aspect_ratio", len(entries), len(kept), len(rejected)))

    unique = dedup_by_hash(kept)
    reports.append(StageReport("dedup", len(kept), len(unique), len(kept) - len(unique)))

    route_counts = {label.value: 0 for label in RouteLabel}
    plain: list[RawImageEntry] = []
    surrounded: list[RawImageEntry] = []
    for e in unique:
        result = probs.get(e.entry_id)
        label = RouteLabel.UNROUTED if result is None else route_by_classification(result, threshold)
        route_counts[label.value] += 1
        if label is RouteLabel.SCREENSHOT:
            plain.append(e)
        elif label is RouteLabel.SURROUNDED_SCREENSHOT:
            surrounded.append(e)
    routed = len(plain) + len(surrounded)
    reports.append(StageReport("route", len(unique), routed, len(unique) - routed))

    screen_repo = [
        ScreenshotRecord(
            id=e.entry_id, app_id=e.app_id, source=Source.SCREEN_REPO,
            image_ref=e.file_ref, content_hash=e.content_bytes_hash or "0" * 40,
            width_px=e.width_px, height_px=e.height_px,
        )
        for e in plain
    ]

    cropped = []
    captions = []
    with_box = [e for e in surrounded if e.entry_id in boxes]
    reports.append(StageReport("detect", len(surrounded), len(with_box),
                               len(surrounded) - len(with_box)))
    for e in with_box:
        det = boxes[e.entry_id]
        cropped.append(crop_to_box(e, det))
        caption = assemble_caption(ocr.get(e.entry_id, []), det.box)
        captions.append(CaptionRecord(entry_id=e.entry_id, app_id=e.app_id, caption=caption))
    screen_repo.extend(cropped)

    final_captions, caption_reports = _postprocess_steps(
        captions,
        lang_detector if lang_detector is not None else ascii_ratio_language_detector,
        spell_corrector if spell_corrector is not None else identity_spell_corrector,
    )
    reports.extend(caption_reports)

    return PipelineResult(
        screen_repo=screen_repo,
        scap_repo=final_captions,
        reports=reports,
        route_counts=route_counts,
    )


def read_manifest(path) -> list[RawImageEntry]:
    """JSONL, one RawImageEntry per line, snake_case field names."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(RawImageEntry(
                entry_id=d["entry_id"], app_id=d["app_id"], file_ref=d["file_ref"],
                width_px=d["width_px"], height_px=d["height_px"],
                content_bytes_hash=d.get("content_bytes_hash"),
            ))
    return out


def read_probs(path) -> dict[str, ClassificationResult]:
    out: dict[str, ClassificationResult] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out[d["entry_id"]] = ClassificationResult(entry_id=d["entry_id"], probs=d["probs"])
    return out


def _box_from_dict(d: dict) -> BoundingBox:
    return BoundingBox(x_min=d["x_min"], y_min=d["y_min"], x_max=d["x_max"], y_max=d["y_max"])


def read_boxes(path) -> dict[str, DetectionResult]:
    out: dict[str, DetectionResult] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out[d["entry_id"]] = DetectionResult(entry_id=d["entry_id"], box=_box_from_dict(d["box"]))
    return out


def read_ocr(path) -> dict[str, list[OcrBox]]:
    out: dict[str, list[OcrBox]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out[d["entry_id"]] = [
                OcrBox(box=_box_from_dict(b), text=b["text"], confidence=b.get("confidence", 1.0))
                for b in d["boxes"]
            ]
    return out


def write_screen_repo(records: list[ScreenshotRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def write_scap_repo(records: list[CaptionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "entry_id": r.entry_id, "app_id": r.app_id,
                "caption": r.caption, "language": r.language,
            }, sort_keys=True) + "\n")


def read_scap_repo(path) -> list[CaptionRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(CaptionRecord(entry_id=d["entry_id"], app_id=d["app_id"],
                                     caption=d["caption"], language=d.get("language", "en")))
    return out


def stage_report_table(reports: list[StageReport]) -> str:
    """Aligned text rendering of per-stage (in, kept, dropped) counts."""
    width = max(len(r.stage) for r in reports) if reports else 5
    lines = [f"{'stage'.ljust(width)}  {'in':>7}  {'kept':>7}  {'dropped':>7}"]
    for r in reports:
        lines.append(f"{r.stage.ljust(width)}  {r.entered:>7}  {r.kept:>7}  {r.dropped:>7}")
    return "\n".join(lines)
