import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guing.core import BoundingBox
from guing.errors import MissingTruth
from guing.evaluation import (
    COCO_THRESHOLDS,
    JudgmentSet,
    RankedList,
    aggregate_judgments,
    classification_report,
    detection_pr_at_iou,
    grouped_split,
    hits_at_k,
    metrics_table,
    mrr,
    precision_at_k,
    read_jsonl,
    recall_at_k,
    render_table,
    single_list_metrics,
    stratified_split,
    write_jsonl,
)


def _list_with_truth_at(query_id, rank, total=15):
    ids = [f"{query_id}-f{i}" for i in range(total)]
    ids.insert(rank - 1, f"{query_id}-truth")
    return RankedList(query_id=query_id, ids=tuple(ids[:total]))


# ------------------------------------------------------------ hand fixtures

def test_recall_at_k_hand_fixture():
    # truth ranks 1, 4, 12 across three queries
    lists = [_list_with_truth_at("q1", 1), _list_with_truth_at("q2", 4),
             _list_with_truth_at("q3", 12)]
    truth = {q: f"{q}-truth" for q in ("q1", "q2", "q3")}
    out = recall_at_k(lists, truth, [1, 5, 10])
    assert abs(out[1] - 1 / 3) < 1e-9
    assert abs(out[5] - 2 / 3) < 1e-9
    assert abs(out[10] - 2 / 3) < 1e-9


def test_recall_at_k_perfect_and_missing_truth():
    lists = [_list_with_truth_at("q", 1)]
    assert recall_at_k(lists, {"q": "q-truth"}, [1]) == {1: 1.0}
    with pytest.raises(MissingTruth):
        recall_at_k(lists, {}, [1])
    with pytest.raises(ValueError):
        recall_at_k(lists, {"q": "q-truth"}, [0])


def test_precision_at_k_hand_fixture():
    lst = RankedList("q", tuple(f"r{i}" for i in range(10)))
    judg = JudgmentSet("q", frozenset({"r0", "r4", "r9"}))
    assert abs(precision_at_k(lst, judg, 10) - 0.3) < 1e-9
    assert precision_at_k(lst, JudgmentSet("q", frozenset()), 10) == 0.0
    # shortfall counts as irrelevant: 3-item list, k=10, all relevant -> 0.3
    short = RankedList("q", ("a", "b", "c"))
    assert abs(precision_at_k(short, JudgmentSet("q", frozenset("abc")), 10) - 0.3) < 1e-9


def test_mrr_hand_fixture():
    lists = [_list_with_truth_at("q1", 1), _list_with_truth_at("q2", 2),
             _list_with_truth_at("q3", 4)]
    judgments = [JudgmentSet(q, frozenset({f"{q}-truth"})) for q in ("q1", "q2", "q3")]
    assert abs(mrr(lists, judgments) - (1.0 + 0.5 + 0.25) / 3) < 1e-9


def test_mrr_no_relevant_contributes_zero():
    lists = [_list_with_truth_at("q1", 1), RankedList("q2", ("x", "y"))]
    judgments = {"q1": {"q1-truth"}, "q2": {"never-retrieved"}}
    assert abs(mrr(lists, judgments) - 0.5) < 1e-9
    assert mrr([], judgments) == 0.0


def test_hits_at_k_hand_fixture():
    lists = [_list_with_truth_at("q1", 3), _list_with_truth_at("q2", 5),
             _list_with_truth_at("q3", 14)]
    judgments = {q: {f"{q}-truth"} for q in ("q1", "q2", "q3")}
    assert abs(hits_at_k(lists, judgments, 10) - 2 / 3) < 1e-9
    assert hits_at_k(lists, judgments, 1) == 0.0
    with pytest.raises(ValueError):
        hits_at_k(lists, judgments, 0)


def test_ranked_list_rejects_duplicates():
    with pytest.raises(ValueError):
        RankedList("q", ("a", "a"))


def test_classification_report_hand_fixture():
    report = classification_report([0, 1, 1, 1], [0, 0, 1, 1], 2)
    c0, c1 = report["per_class"]
    assert abs(c0["precision"] - 1.0) < 1e-9
    assert abs(c0["recall"] - 0.5) < 1e-9
    assert abs(c0["f1"] - 2 / 3) < 1e-9
    assert abs(c1["precision"] - 2 / 3) < 1e-9
    assert abs(c1["recall"] - 1.0) < 1e-9
    assert abs(c1["f1"] - 0.8) < 1e-9
    assert abs(report["weighted"]["f1"] - (2 * (2 / 3) + 2 * 0.8) / 4) < 1e-9
    assert abs(report["accuracy"] - 0.75) < 1e-9
    assert c0["support"] == 2 and c1["support"] == 2


def test_classification_report_perfect_and_zero_pred():
    perfect = classification_report([0, 1, 2], [0, 1, 2], 3)
    assert perfect["accuracy"] == 1.0
    assert all(c["f1"] == 1.0 for c in perfect["per_class"])
    # class 1 never predicted: precision 0 and flagged
    rep = classification_report([0, 0, 0], [0, 1, 0], 2)
    c1 = rep["per_class"][1]
    assert c1["precision"] == 0.0
    assert c1["zero_predictions"] is True


def test_classification_weighted_recall_equals_accuracy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        golds = rng.integers(4, size=50).tolist()
        preds = rng.integers(4, size=50).tolist()
        rep = classification_report(preds, golds, 4)
        assert abs(rep["weighted"]["recall"] - rep["accuracy"]) < 1e-12


def _iou_box(target_iou):
    # unit square against a vertical slide producing the wanted IoU:
    # overlap h, union 2-h, IoU = h/(2-h) -> h = 2*iou/(1+iou)
    h = 2 * target_iou / (1 + target_iou)
    return BoundingBox(0.0, 1.0 - h, 1.0, 2.0 - h)


def test_detection_pr_hand_fixtures():
    gold = BoundingBox(0.0, 0.0, 1.0, 1.0)
    # identical boxes: precision 1 at every threshold
    at, mean = detection_pr_at_iou({"img": gold}, {"img": gold}, COCO_THRESHOLDS)
    assert all(p.precision == 1.0 and p.recall == 1.0 for p in at.values())
    assert mean.precision == 1.0

    # IoU = 0.6: TP at 0.50, FP at 0.75
    pred = _iou_box(0.6)
    from guing.core import iou
    assert abs(iou(pred, gold) - 0.6) < 1e-9
    at, _ = detection_pr_at_iou({"img": pred}, {"img": gold}, (0.50, 0.75))
    assert at[0.50].precision == 1.0 and at[0.50].recall == 1.0
    assert at[0.75].precision == 0.0 and at[0.75].recall == 0.0


def test_detection_missing_prediction_is_false_negative():
    gold = BoundingBox(0.0, 0.0, 1.0, 1.0)
    at, _ = detection_pr_at_iou({"a": gold, "b": None}, {"a": gold, "b": gold}, (0.5,))
    assert at[0.5].precision == 1.0  # the one made prediction is correct
    assert abs(at[0.5].recall - 0.5) < 1e-9  # but one gold was missed
    with pytest.raises(ValueError):
        detection_pr_at_iou({"a": gold, "zz": gold}, {"a": gold}, (0.5,))


def test_coco_thresholds():
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


# -------------------------------------------------------- randomized checks

@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_rank_metric_monotonicity_property(seed):
    rng = np.random.default_rng(seed)
    n_queries = int(rng.integers(1, 6))
    lists, judgments = [], {}
    for qi in range(n_queries):
        universe = [f"d{j}" for j in range(30)]
        size = int(rng.integers(1, 21))
        picked = rng.choice(30, size=size, replace=False)
        lists.append(RankedList(f"q{qi}", tuple(universe[j] for j in picked)))
        judgments[f"q{qi}"] = {universe[j] for j in rng.choice(30, size=int(rng.integers(0, 6)),
                                                               replace=False)}
    last = 0.0
    for k in range(1, 25):
        h = hits_at_k(lists, judgments, k)
        assert 0.0 <= h <= 1.0
        assert h >= last - 1e-12
        # precision can never exceed the hit indicator at the same k
        for lst in lists:
            judg = JudgmentSet(lst.query_id, frozenset(judgments[lst.query_id]))
            p = precision_at_k(lst, judg, k)
            assert p <= hits_at_k([lst], {lst.query_id: judgments[lst.query_id]}, k) + 1e-12
        last = h


def test_mrr_equals_recall_at_1_for_single_relevant_at_top_or_absent():
    lists = [_list_with_truth_at("q1", 1), RankedList("q2", ("x", "y", "z"))]
    truth = {"q1": "q1-truth", "q2": "q2-truth"}
    judgments = {q: {t} for q, t in truth.items()}
    assert abs(mrr(lists, judgments) - recall_at_k(lists, truth, [1])[1]) < 1e-12


# ------------------------------------------------------- aggregation/tables

def _record(query, evaluator, ranked, relevant, engine="e1"):
    return {"query": query, "evaluator_id": evaluator,
            "engines": {engine: {"ranked_ids": list(ranked), "relevant_ids": list(relevant)}}}


def test_single_list_metrics():
    out = single_list_metrics(["a", "b", "c"], ["b"], ks=(1, 3))
    assert out["mrr"] == 0.5
    assert out["p_at"][1] == 0.0
    assert abs(out["p_at"][3] - 1 / 3) < 1e-12
    assert out["hit_at"][1] == 0.0
    assert out["hit_at"][3] == 1.0


def test_aggregate_groups_by_query_and_evaluator():
    # same (query, evaluator) twice -> averaged within the pair first
    records = [
        _record("q", "alice", ["a", "b"], ["a"]),   # mrr 1.0
        _record("q", "alice", ["a", "b"], ["b"]),   # mrr 0.5
        _record("q", "bob", ["a", "b"], []),        # mrr 0.0
    ]
    out = aggregate_judgments(records, ks=(1,))
    # pair means: alice 0.75, bob 0.0 -> engine mean 0.375
    assert abs(out["e1"]["mrr"] - 0.375) < 1e-12
    assert out["e1"]["pairs"] == 2


def test_aggregate_multiple_engines():
    records = [{
        "query": "q", "evaluator_id": "a",
        "engines": {
            "vec": {"ranked_ids": ["x", "y"], "relevant_ids": ["x"]},
            "kw": {"ranked_ids": ["y", "x"], "relevant_ids": ["x"]},
        },
    }]
    out = aggregate_judgments(records, ks=(1, 3))
    assert out["vec"]["mrr"] == 1.0
    assert out["kw"]["mrr"] == 0.5
    table = metrics_table(out, ks=(1, 3))
    assert "engine" in table.splitlines()[0]
    assert any(line.startswith("vec") for line in table.splitlines())


def test_render_table_alignment():
    table = render_table(["name", "v"], [["a", 0.5], ["bbbb", 1.0]])
    lines = table.splitlines()
    assert lines[0].startswith("name")
    assert set(lines[1]) <= {"-", " "}
    assert lines[2].startswith("a ")    # first column left-aligned
    assert lines[2].endswith("0.500")   # numbers right-aligned, 3 decimals
    assert lines[3].endswith("1.000")


# ----------------------------------------------------------------- splits

def test_grouped_split_never_splits_a_group():
    groups = ["a"] * 10 + ["b"] * 10 + ["c"] * 10 + ["d"] * 10
    train, test = grouped_split(groups, 0.25, seed=3)
    assert sorted(train + test) == list(range(40))
    train_groups = {groups[i] for i in train}
    test_groups = {groups[i] for i in test}
    assert not train_groups & test_groups
    assert len(test) >= 10  # at least the target fraction


def test_grouped_split_deterministic_and_seed_sensitive():
    groups = [f"g{i % 7}" for i in range(70)]
    a = grouped_split(groups, 0.3, seed=0)
    b = grouped_split(groups, 0.3, seed=0)
    c = grouped_split(groups, 0.3, seed=1)
    assert a == b
    assert a != c
    with pytest.raises(ValueError):
        grouped_split(groups, 0.0)
    with pytest.raises(ValueError):
        grouped_split(groups, 1.0)


def test_stratified_split_keeps_class_balance():
    labels = [0] * 50 + [1] * 30 + [2] * 20
    train, test = stratified_split(labels, 0.2, seed=0)
    assert sorted(train + test) == list(range(100))
    test_labels = [labels[i] for i in test]
    assert test_labels.count(0) == 10
    assert test_labels.count(1) == 6
    assert test_labels.count(2) == 4


def test_jsonl_roundtrip(tmp_path):
    rows = [{"b": 2, "a": 1}, {"x": [1, 2, 3]}]
    path = tmp_path / "r.jsonl"
    write_jsonl(path, rows)
    assert read_jsonl(path) == rows
    # keys are sorted on disk for byte-stable output
    first_line = path.read_text().splitlines()[0]
    assert first_line == '{"a": 1, "b": 2}'
