import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build_pipeline_fixture
from guing.core import BoundingBox, OcrBox, Source
from guing.errors import BoxOutOfBounds
from guing.pipeline import (
    CaptionRecord,
    ClassificationResult,
    DetectionResult,
    RawImageEntry,
    RouteLabel,
    StageReport,
    ascii_ratio_language_detector,
    assemble_caption,
    compute_hashes,
    crop_to_box,
    dedup_by_hash,
    filter_by_aspect_ratio,
    postprocess_captions,
    read_boxes,
    read_manifest,
    read_ocr,
    read_probs,
    read_scap_repo,
    route_by_classification,
    run_pipeline,
    stage_report_table,
    write_scap_repo,
    write_screen_repo,
)


def _entry(entry_id="e0", app_id="a0", width=1080, height=1920, h=None):
    return RawImageEntry(entry_id=entry_id, app_id=app_id, file_ref=f"{entry_id}.png",
                         width_px=width, height_px=height, content_bytes_hash=h)


# -------------------------------------------------------------- unit stages

def test_raw_image_entry_validation():
    with pytest.raises(ValueError):
        _entry(width=0)
    with pytest.raises(ValueError):
        _entry(h="UPPERCASE" + "0" * 31)
    with pytest.raises(ValueError):
        _entry(h="abc")
    _entry(h="0" * 40)


def test_compute_hashes_matches_sha1_and_order(tmp_path):
    payloads = [b"alpha", b"beta", b"gamma"]
    entries = []
    for i, payload in enumerate(payloads):
        (tmp_path / f"f{i}.png").write_bytes(payload)
        entries.append(RawImageEntry(entry_id=f"f{i}", app_id="a", file_ref=f"f{i}.png",
                                     width_px=10, height_px=20))
    for threads in (1, 3):
        out = compute_hashes(entries, root=tmp_path, threads=threads)
        assert [e.entry_id for e in out] == ["f0", "f1", "f2"]
        assert [e.content_bytes_hash for e in out] == \
            [hashlib.sha1(p).hexdigest() for p in payloads]


def test_filter_by_aspect_ratio_inclusive_bounds():
    lo = _entry("lo", width=1000, height=1300)    # ratio exactly 1.3
    hi = _entry("hi", width=1000, height=3000)    # ratio exactly 3.0
    under = _entry("under", width=1000, height=1299)
    over = _entry("over", width=1000, height=3001)
    kept, rejected = filter_by_aspect_ratio([lo, hi, under, over])
    assert [e.entry_id for e in kept] == ["lo", "hi"]
    assert [e.entry_id for e in rejected] == ["under", "over"]
    with pytest.raises(ValueError):
        filter_by_aspect_ratio([], min_ratio=2.0, max_ratio=1.0)


def test_dedup_keeps_first_occurrence():
    a = _entry("a", h="1" * 40)
    b = _entry("b", h="2" * 40)
    a2 = _entry("a-copy", h="1" * 40)
    assert [e.entry_id for e in dedup_by_hash([a, b, a2])] == ["a", "b"]
    assert [e.entry_id for e in dedup_by_hash([a2, b, a])] == ["a-copy", "b"]
    with pytest.raises(ValueError):
        dedup_by_hash([_entry("x")])


def test_dedup_proportion_fixture():
    # 1000 entries where 280 are byte-copies: 720 survive
    rng = np.random.default_rng(42)
    originals = [_entry(f"o{i:03d}", h=hashlib.sha1(f"u{i}".encode()).hexdigest())
                 for i in range(720)]
    dup_of = rng.integers(0, 720, size=280)
    entries = list(originals)
    for d, twin in enumerate(dup_of):
        pos = int(rng.integers(0, len(entries) + 1))
        copy = _entry(f"d{d:03d}", h=originals[twin].content_bytes_hash)
        # keep every copy after its original so the originals are the keepers
        first = next(i for i, e in enumerate(entries)
                     if e.content_bytes_hash == copy.content_bytes_hash)
        entries.insert(max(pos, first + 1), copy)
    kept = dedup_by_hash(entries)
    assert len(entries) == 1000
    assert len(kept) == 720
    assert all(e.entry_id.startswith("o") for e in kept)


def test_classification_result_validation():
    good = {"screenshot": 0.5, "surrounded_screenshot": 0.3, "irrelevant": 0.2}
    ClassificationResult("e", good)
    with pytest.raises(ValueError):
        ClassificationResult("e", {"screenshot": 1.0})
    with pytest.raises(ValueError):
        ClassificationResult("e", {**good, "screenshot": 0.9})  # sums to 1.4
    with pytest.raises(ValueError):
        ClassificationResult("e", {"screenshot": -0.1, "surrounded_screenshot": 0.6,
                                   "irrelevant": 0.5})


def test_route_by_classification_threshold():
    probs = {"screenshot": 0.95, "surrounded_screenshot": 0.03, "irrelevant": 0.02}
    assert route_by_classification(ClassificationResult("e", probs)) is RouteLabel.SCREENSHOT
    low = {"screenshot": 0.5, "surrounded_screenshot": 0.3, "irrelevant": 0.2}
    assert route_by_classification(ClassificationResult("e", low)) is RouteLabel.UNROUTED
    # exactly at the threshold stays unrouted (strict >)
    edge = {"screenshot": 0.9, "surrounded_screenshot": 0.05, "irrelevant": 0.05}
    assert route_by_classification(ClassificationResult("e", edge), 0.9) is RouteLabel.UNROUTED
    with pytest.raises(ValueError):
        route_by_classification(ClassificationResult("e", probs), 1.5)


@settings(max_examples=50)
@given(st.floats(min_value=0.001, max_value=1.0), st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=1.0))
def test_route_threshold_zero_is_argmax(a, b, c):
    total = a + b + c
    probs = {"screenshot": a / total, "surrounded_screenshot": b / total,
             "irrelevant": c / total}
    label = route_by_classification(ClassificationResult("e", probs), threshold=0.0)
    assert label is not RouteLabel.UNROUTED
    assert probs[label.value] == max(probs.values())


def test_route_tie_breaks_by_declaration_order():
    probs = {"screenshot": 0.4, "surrounded_screenshot": 0.4, "irrelevant": 0.2}
    assert route_by_classification(ClassificationResult("e", probs), 0.0) is RouteLabel.SCREENSHOT


def test_crop_to_box_half_open_pixels():
    entry = _entry("e", width=1080, height=1920, h="a" * 40)
    det = DetectionResult("e", BoundingBox(100.0, 200.0, 980.0, 1800.0))
    rec = crop_to_box(entry, det)
    assert rec.width_px == 880 and rec.height_px == 1600
    assert rec.source is Source.SCREEN_REPO
    assert rec.content_hash == "a" * 40
    # fractional coordinates round at each edge
    frac = DetectionResult("e", BoundingBox(0.4, 0.6, 10.4, 20.4))
    rec = crop_to_box(entry, frac)
    assert rec.width_px == 10 and rec.height_px == 19
    with pytest.raises(BoxOutOfBounds):
        crop_to_box(entry, DetectionResult("e", BoundingBox(0.0, 0.0, 2000.0, 100.0)))
    with pytest.raises(BoxOutOfBounds):
        crop_to_box(entry, DetectionResult("e", BoundingBox(-1.0, 0.0, 10.0, 10.0)))


def test_assemble_caption_excludes_overlap_and_sorts():
    shot = BoundingBox(100.0, 200.0, 980.0, 1800.0)
    boxes = [
        OcrBox(BoundingBox(500.0, 20.0, 900.0, 90.0), "second", 0.9),
        OcrBox(BoundingBox(100.0, 20.0, 480.0, 90.0), "first", 0.9),
        OcrBox(BoundingBox(150.0, 250.0, 700.0, 350.0), "inside -- excluded", 0.9),
        OcrBox(BoundingBox(100.0, 1850.0, 400.0, 1900.0), "third", 0.9),
    ]
    assert assemble_caption(boxes, shot) == "first second third"
    # a box merely touching the screenshot edge has zero intersection: kept
    touching = OcrBox(BoundingBox(100.0, 1800.0, 400.0, 1850.0), "touch", 0.9)
    assert "touch" in assemble_caption([touching], shot)
    assert assemble_caption([], shot) == ""


@settings(max_examples=30)
@given(st.permutations(list(range(4))))
def test_assemble_caption_input_order_invariant(perm):
    shot = BoundingBox(0.0, 500.0, 100.0, 600.0)
    boxes = [
        OcrBox(BoundingBox(0.0, 0.0, 50.0, 20.0), "a", 0.9),
        OcrBox(BoundingBox(60.0, 0.0, 90.0, 20.0), "b", 0.9),
        OcrBox(BoundingBox(0.0, 30.0, 50.0, 45.0), "c", 0.9),
        OcrBox(BoundingBox(0.0, 700.0, 50.0, 720.0), "d", 0.9),
    ]
    shuffled = [boxes[i] for i in perm]
    assert assemble_caption(shuffled, shot) == "a b c d"


def test_language_detector():
    assert ascii_ratio_language_detector("Track your sleep cycles")
    assert not ascii_ratio_language_detector("Приложение для сна")
    assert not ascii_ratio_language_detector("")
    assert not ascii_ratio_language_detector("12345 67890")  # no letters
    assert ascii_ratio_language_detector("café menu and more text here")


def test_postprocess_captions():
    records = [
        CaptionRecord("e1", "app-a", "Sleep tracker"),
        CaptionRecord("e2", "app-a", ""),
        CaptionRecord("e3", "app-a", "Приложение"),
        CaptionRecord("e4", "app-a", "Sleep tracker"),   # dup within app-a
        CaptionRecord("e5", "app-b", "Sleep tracker"),   # same text, other app: kept
    ]
    out = postprocess_captions(records)
    assert [r.entry_id for r in out] == ["e1", "e5"]
    # custom corrector applies before dedup
    fixed = postprocess_captions(
        [CaptionRecord("e1", "a", "slep tracker"), CaptionRecord("e2", "a", "sleep tracker")],
        spell_corrector=lambda c: c.replace("slep", "sleep"),
    )
    assert [r.entry_id for r in fixed] == ["e1"]


def test_stage_report_arithmetic_enforced():
    StageReport("s", 10, 7, 3)
    with pytest.raises(ValueError):
        StageReport("s", 10, 7, 2)


# ------------------------------------------------------------- full fixture

@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    return build_pipeline_fixture(root)


def _load_all(fx):
    entries = compute_hashes(read_manifest(fx.manifest), root=fx.root)
    return entries, read_probs(fx.probs), read_boxes(fx.boxes), read_ocr(fx.ocr)


def test_planted_fixture_stage_counts(planted):
    entries, probs, boxes, ocr = _load_all(planted)
    result = run_pipeline(entries, probs, boxes, ocr)
    got = {r.stage: (r.entered, r.kept, r.dropped) for r in result.reports}
    assert got == planted.expected_stage_counts
    assert result.route_counts == planted.expected_route_counts
    assert len(result.screen_repo) == planted.expected_screen_repo
    assert len(result.scap_repo) == planted.expected_scap_repo


def test_planted_fixture_caption_contents(planted):
    entries, probs, boxes, ocr = _load_all(planted)
    result = run_pipeline(entries, probs, boxes, ocr)
    captions = {r.entry_id: r.caption for r in result.scap_repo}
    # cross-app identical captions both survive
    assert captions["orig-0220"] == "Sync across all devices"
    assert captions["orig-0300"] == "Sync across all devices"
    # first member of each per-app duplicate pair is the keeper
    assert "orig-0350" in captions and "orig-0351" not in captions
    # every caption is non-empty English
    assert all(ascii_ratio_language_detector(c) for c in captions.values())


def test_pipeline_thread_count_determinism(planted):
    raw = read_manifest(planted.manifest)
    h1 = compute_hashes(raw, root=planted.root, threads=1)
    h4 = compute_hashes(raw, root=planted.root, threads=4)
    assert h1 == h4


def test_pipeline_rerun_byte_identical(planted, tmp_path):
    outs = []
    for run in range(2):
        entries, probs, boxes, ocr = _load_all(planted)
        result = run_pipeline(entries, probs, boxes, ocr)
        screen = tmp_path / f"screen-{run}.jsonl"
        scap = tmp_path / f"scap-{run}.jsonl"
        write_screen_repo(result.screen_repo, screen)
        write_scap_repo(result.scap_repo, scap)
        outs.append((screen.read_bytes(), scap.read_bytes()))
    assert outs[0] == outs[1]


def test_scap_repo_roundtrip(planted, tmp_path):
    entries, probs, boxes, ocr = _load_all(planted)
    result = run_pipeline(entries, probs, boxes, ocr)
    path = tmp_path / "scap.jsonl"
    write_scap_repo(result.scap_repo, path)
    assert read_scap_repo(path) == result.scap_repo


def test_stage_report_table_renders(planted):
    entries, probs, boxes, ocr = _load_all(planted)
    result = run_pipeline(entries, probs, boxes, ocr)
    table = stage_report_table(result.reports)
    lines = table.splitlines()
    assert lines[0].split() == ["stage", "in", "kept", "dropped"]
    assert len(lines) == 1 + len(result.reports)
    assert any("aspect_ratio" in line and "1000" in line for line in lines)
