"""Retrieval, classification, and detection metrics plus experiment plumbing.

Everything here is a pure function over plain data. The service computes its
live numbers through the same aggregation used for offline judgment replays,
so the two can never drift apart.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, iou
from .errors import MissingTruth


@dataclass(frozen=True)
class RankedList:
    """Ordered candidate ids for one query, best first."""

    query_id: str
    ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError(f"ranked list for {self.query_id!r} repeats an id")
        object.__setattr__(self, "ids", ids)


@dataclass(frozen=True)
class JudgmentSet:
    """Ids judged relevant for one query; may be empty."""

    query_id: str
    relevant: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(self.relevant))


def _judgment_map(judgments) -> dict[str, frozenset[str]]:
    if isinstance(judgments, dict):
        return {q: frozenset(rel) for q, rel in judgments.items()}
    return {j.query_id: j.relevant for j in judgments}


def recall_at_k(lists: list[RankedList], truth: dict[str, str], ks) -> dict[int, float]:
    """Fraction of queries whose single ground-truth id is in the top k."""
    if not lists:
        return {int(k): 0.0 for k in ks}
    for lst in lists:
        if lst.query_id not in truth:
            raise MissingTruth(f"no ground truth for query {lst.query_id!r}")
    out: dict[int, float] = {}
    for k in ks:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        hits = sum(1 for lst in lists if truth[lst.query_id] in lst.ids[:k])
        out[int(k)] = hits / len(lists)
    return out


def precision_at_k(lst: RankedList, judg: JudgmentSet, k: int) -> float:
    """|relevant in top-k| / k; a short list's shortfall counts as irrelevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return sum(1 for i in lst.ids[:k] if i in judg.relevant) / k


def _first_relevant_rank(lst: RankedList, relevant: frozenset[str]) -> int | None:
    for pos, cand in enumerate(lst.ids, start=1):
        if cand in relevant:
            return pos
    return None


def mrr(lists: list[RankedList], judgments) -> float:
    """Mean reciprocal rank of the first relevant result; none retrieved → 0."""
    if not lists:
        return 0.0
    rel = _judgment_map(judgments)
    total = 0.0
    for lst in lists:
        rank = _first_relevant_rank(lst, rel.get(lst.query_id, frozenset()))
        if rank is not None:
            total += 1.0 / rank
    return total / len(lists)


def hits_at_k(lists: list[RankedList], judgments, k: int) -> float:
    """Fraction of queries with at least one relevant id in the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not lists:
        return 0.0
    rel = _judgment_map(judgments)
    hit = sum(
        1 for lst in lists
        if any(i in rel.get(lst.query_id, frozenset()) for i in lst.ids[:k])
    )
    return hit / len(lists)


def classification_report(preds, golds, n_classes: int) -> dict:
    """Per-class and gold-support-weighted precision/recall/F1.

    A class never predicted gets precision 0 and is flagged, rather than
    being silently skipped.
    """
    p = np.asarray(preds, dtype=np.int64)
    g = np.asarray(golds, dtype=np.int64)
    if p.shape != g.shape or p.ndim != 1:
        raise ValueError(f"preds {p.shape} do not align with golds {g.shape}")
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    if p.size and (p.min() < 0 or p.max() >= n_classes or g.min() < 0 or g.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")

    per_class = []
    total = len(g)
    weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    for c in range(n_classes):
        tp = int(np.sum((p == c) & (g == c)))
        pred_c = int(np.sum(p == c))
        support = int(np.sum(g == c))
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append({
            "class": c,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": support,
            "zero_predictions": pred_c == 0,
        })
        if total:
            w = support / total
            weighted["precision"] += w * precision
            weighted["recall"] += w * recall
            weighted["f1"] += w * f1
    accuracy = float(np.mean(p == g)) if total else 0.0
    return {"per_class": per_class, "weighted": weighted, "accuracy": accuracy}


@dataclass(frozen=True)
class PrPoint:
    precision: float
    recall: float


COCO_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def detection_pr_at_iou(preds: dict[str, BoundingBox | None], golds: dict[str, BoundingBox],
                        thresholds=(0.50, 0.75)) -> tuple[dict[float, PrPoint], PrPoint]:
    """Single-box-per-image detection PR at each threshold, plus the
    0.50:0.95 mean. A missing or None prediction is a false negative."""
    unknown = set(preds) - set(golds)
    if unknown:
        raise ValueError(f"predictions for images without gold boxes: {sorted(unknown)[:3]}")
    ious: list[float | None] = []
    for image_id, gold in golds.items():
        pred = preds.get(image_id)
        ious.append(None if pred is None else iou(pred, gold))

    def point(threshold: float) -> PrPoint:
        tp = sum(1 for v in ious if v is not None and v >= threshold)
        n_pred = sum(1 for v in ious if v is not None)
        n_gold = len(ious)
        return PrPoint(
            precision=tp / n_pred if n_pred else 0.0,
            recall=tp / n_gold if n_gold else 0.0,
        )

    at = {float(t): point(t) for t in thresholds}
    coco = [point(t) for t in COCO_THRESHOLDS]
    mean = PrPoint(
        precision=float(np.mean([c.precision for c in coco])),
        recall=float(np.mean([c.recall for c in coco])),
    )
    return at, mean


def single_list_metrics(ranked_ids, relevant_ids, ks=(1, 3, 5, 10)) -> dict:
    """MRR contribution, P@k, and HIT@k for one ranked list."""
    lst = RankedList(query_id="_", ids=tuple(ranked_ids))
    judg = JudgmentSet(query_id="_", relevant=frozenset(relevant_ids))
    rank = _first_relevant_rank(lst, judg.relevant)
    return {
        "mrr": 0.0 if rank is None else 1.0 / rank,
        "p_at": {int(k): precision_at_k(lst, judg, k) for k in ks},
        "hit_at": {int(k): float(any(i in judg.relevant for i in lst.ids[:k])) for k in ks},
    }


def aggregate_judgments(records, ks=(1, 3, 5, 10)) -> dict[str, dict]:
    """Fold submitted judgment records into per-engine tables.

    Each record is one submission: {"query", "evaluator_id", "engines":
    {engine_id: {"ranked_ids": [...], "relevant_ids": [...]}}}. Averaging is
    over (query, evaluator) pairs: repeats of the same pair are averaged
    together first so no pair counts twice.
    """
    ks = tuple(int(k) for k in ks)
    groups: dict[str, dict[tuple[str, str], list[dict]]] = defaultdict(lambda: defaultdict(list))
    for rec in records:
        key = (rec["query"], rec["evaluator_id"])
        for engine_id, payload in rec["engines"].items():
            groups[engine_id][key].append(
                single_list_metrics(payload["ranked_ids"], payload["relevant_ids"], ks)
            )

    out: dict[str, dict] = {}
    for engine_id, by_pair in groups.items():
        pair_means = []
        for metrics in by_pair.values():
            pair_means.append({
                "mrr": float(np.mean([m["mrr"] for m in metrics])),
                "p_at": {k: float(np.mean([m["p_at"][k] for m in metrics])) for k in ks},
                "hit_at": {k: float(np.mean([m["hit_at"][k] for m in metrics])) for k in ks},
            })
        out[engine_id] = {
            "mrr": float(np.mean([m["mrr"] for m in pair_means])),
            "p_at": {k: float(np.mean([m["p_at"][k] for m in pair_means])) for k in ks},
            "hit_at": {k: float(np.mean([m["hit_at"][k] for m in pair_means])) for k in ks},
            "pairs": len(pair_means),
        }
    return out


def grouped_split(group_ids: list[str], test_fraction: float, seed: int = 0) -> tuple[list[int], list[int]]:
    """Train/test row indices such that no group id crosses the split.

    Whole groups are drawn (seeded shuffle) into the test side until it
    holds at least test_fraction of the rows.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rows_by_group: dict[str, list[int]] = defaultdict(list)
    for row, gid in enumerate(group_ids):
        rows_by_group[gid].append(row)
    order = sorted(rows_by_group)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    target = test_fraction * len(group_ids)
    test_rows: list[int] = []
    cut = 0
    while cut < len(order) and len(test_rows) < target:
        test_rows.extend(rows_by_group[order[cut]])
        cut += 1
    train_rows = [r for gid in order[cut:] for r in rows_by_group[gid]]
    return sorted(train_rows), sorted(test_rows)


def stratified_split(labels, test_fraction: float, seed: int = 0) -> tuple[list[int], list[int]]:
    """Per-class proportional train/test split of row indices."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        rng.shuffle(rows)
        n_test = int(round(test_fraction * len(rows)))
        n_test = min(n_test, len(rows) - 1) if len(rows) > 1 else 0
        test.extend(rows[:n_test].tolist())
        train.extend(rows[n_test:].tolist())
    return sorted(train), sorted(test)


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_ranked_lists(path) -> list[RankedList]:
    return [RankedList(query_id=r["query_id"], ids=tuple(r["ids"])) for r in read_jsonl(path)]


def read_judgments(path) -> list[JudgmentSet]:
    return [JudgmentSet(query_id=r["query_id"], relevant=frozenset(r["relevant_ids"]))
            for r in read_jsonl(path)]


def render_table(headers: list[str], rows: list[list]) -> str:
    """Aligned-column text table; numbers formatted to three decimals."""
    def fmt(cell) -> str:
        if isinstance(cell, float):
            return f"{cell:.3f}"
        return str(cell)

    formatted = [[fmt(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in formatted:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in formatted:
        cells = []
        for i, cell in enumerate(row):
            if i == 0:
                cells.append(cell.ljust(widths[i]))
            else:
                cells.append(cell.rjust(widths[i]))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def metrics_table(per_engine: dict[str, dict], ks=(1, 3, 5, 10)) -> str:
    """Render aggregate_judgments output, one engine per row."""
    headers = ["engine", "MRR"] + [f"P@{k}" for k in ks] + [f"HIT@{k}" for k in ks]
    rows = []
    for engine_id in sorted(per_engine):
        m = per_engine[engine_id]
        rows.append([engine_id, m["mrr"]]
                    + [m["p_at"][k] for k in ks]
                    + [m["hit_at"][k] for k in ks])
    return render_table(headers, rows)
