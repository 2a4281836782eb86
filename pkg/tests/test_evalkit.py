import csv
import io
import itertools

import numpy as np
import pytest

from pidtwin.errors import SymbolSetMismatch
from pidtwin.evalkit import (
    ConfusionCounts,
    all_point_ap,
    average_precision,
    iou,
    match_detections,
    metrics,
    per_class_average_precision,
    pooled_average_precision,
    pr_curve_csv,
    report_table,
    report_to_json,
    score_connections,
    score_connections_by_path,
)
from pidtwin.plancore import BoundingBox
from pidtwin.topoderive import ConnectionMatrix
from tests.helpers import sym


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_metrics_reproduce_connection_counts():
    r = metrics(ConfusionCounts(tp=116, fp=11, fn=39, tn=400))
    assert round(r.recall, 4) == 0.7484
    assert round(r.precision, 4) == 0.9134
    assert round(r.accuracy, 4) == 0.9117
    assert round(r.specificity, 4) == 0.9732
    assert round(r.npv, 4) == 0.9112
    assert round(r.f1, 4) == 0.8227


def test_metrics_degenerate():
    assert all(v is None for v in metrics(ConfusionCounts()).as_dict().values())
    r = metrics(ConfusionCounts(tp=1))
    assert (r.recall, r.precision, r.f1, r.accuracy) == (1.0, 1.0, 1.0, 1.0)
    assert r.specificity is None and r.npv is None
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_metrics_formulas_on_random_counts():
    rng = np.random.default_rng(1)
    for tp, fp, fn, tn in rng.integers(0, 50, size=(1000, 4)).tolist():
        r = metrics(ConfusionCounts(tp, fp, fn, tn))
        if tp + fn:
            assert abs(r.recall - tp / (tp + fn)) < 1e-12
        if tp + fp:
            assert abs(r.precision - tp / (tp + fp)) < 1e-12
        if r.recall and r.precision:
            assert abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)) < 1e-12
        if tn + fp:
            assert abs(r.specificity - tn / (tn + fp)) < 1e-12
        if tn + fn:
            assert abs(r.npv - tn / (tn + fn)) < 1e-12
        if tp + fp + fn + tn:
            assert abs(r.accuracy - (tp + tn) / (tp + fp + fn + tn)) < 1e-12


def test_match_detections_greedy():
    truth = [sym("T1", "Valve", 0, 0, 10, 10), sym("T2", "Valve", 50, 50, 60, 60)]
    assert match_detections(truth, truth).counts == ConfusionCounts(tp=2)
    assert match_detections([sym("P", "Valve", 0, 0, 10, 10)], []).counts == ConfusionCounts(fp=1)
    doubles = [sym("P1", "Valve", 0, 0, 10, 10, 0.9), sym("P2", "Valve", 1, 0, 11, 10, 0.8)]
    m = match_detections(doubles, truth[:1])
    assert m.counts == ConfusionCounts(tp=1, fp=1)
    assert m.flags == (True, False) and m.pairs == (("P1", "T1"),)
    wrong_class = [sym("P", "Pump", 0, 0, 10, 10)]
    assert match_detections(wrong_class, truth[:1]).counts == ConfusionCounts(fp=1, fn=1)


def test_average_precision_hand_example():
    truth = [sym("T1", "Valve", 0, 0, 10, 10), sym("T2", "Valve", 50, 50, 60, 60)]
    pred = [sym("P1", "Valve", 0, 0, 10, 10, 0.9), sym("P2", "Valve", 100, 100, 110, 110, 0.8),
            sym("P3", "Valve", 50, 50, 60, 60, 0.7)]
    curve = average_precision(pred, truth)
    assert [(p.recall, round(p.precision, 3)) for p in curve.points] == [(0.5, 1.0), (0.5, 0.5), (1.0, 0.667)]
    assert curve.ap == pytest.approx(0.8333, abs=1e-4)


def test_average_precision_extremes():
    truth = [sym("T1", "Valve", 0, 0, 10, 10)]
    assert average_precision(truth, truth).ap == 1.0
    assert average_precision([sym("P", "Valve", 40, 40, 50, 50, 0.5)], truth).ap == 0.0
    assert average_precision([], truth).ap == 0.0
    assert average_precision([sym("P", "Valve", 0, 0, 10, 10)], []).ap is None
    assert all_point_ap([1.0], [1.0]) == 1.0


def test_ap_is_one_iff_scores_separate_hits():
    truth = [sym(f"T{i}", "Valve", 20 * i, 0, 20 * i + 10, 10) for i in range(3)]
    hits = [sym(f"P{i}", "Valve", 20 * i, 0, 20 * i + 10, 10, 0.9 - 0.1 * i) for i in range(3)]
    miss = sym("X", "Valve", 200, 200, 210, 210, 0.1)
    assert average_precision([*hits, miss], truth).ap == 1.0
    assert average_precision([*hits, miss.__class__("X", "Valve", miss.bbox, 0.95)], truth).ap < 1.0
    for ap in (average_precision(hits[:k], truth).ap for k in range(4)):
        assert 0.0 <= ap <= 1.0


def test_pooled_and_per_class_ap():
    plan_a = ("a", [sym("P1", "Valve", 0, 0, 10, 10, 0.9)], [sym("T1", "Valve", 0, 0, 10, 10)])
    plan_b = ("b", [sym("P1", "Pump", 0, 0, 10, 10, 0.8)], [sym("T1", "Pump", 30, 30, 40, 40)])
    pooled = pooled_average_precision([plan_a, plan_b])
    assert [p.threshold for p in pooled.points] == [0.9, 0.8]
    assert pooled.ap == pytest.approx(0.5)
    curves, mean_ap = per_class_average_precision([plan_a, plan_b], classes=["Valve", "Pump", "Flap"])
    assert curves["Valve"].ap == 1.0 and curves["Pump"].ap == 0.0 and curves["Flap"].ap is None
    assert mean_ap == pytest.approx(0.5)


def test_score_connections_examples():
    ids = ["A", "B", "C", "D"]
    truth = ConnectionMatrix.from_edges(ids, [("A", "B"), ("C", "D")])
    pred = ConnectionMatrix.from_edges(ids, [("A", "B"), ("A", "C")])
    assert score_connections(pred, truth) == ConfusionCounts(tp=1, fp=1, fn=1, tn=3)
    assert score_connections(truth, truth) == ConfusionCounts(tp=2, tn=4)
    assert score_connections(ConnectionMatrix.empty(ids), truth) == ConfusionCounts(fn=2, tn=4)
    # argument order swaps fp and fn
    assert score_connections(truth, pred) == ConfusionCounts(tp=1, fp=1, fn=1, tn=3)
    assert score_connections(pred.reordered(["D", "C", "B", "A"]), truth) == score_connections(pred, truth)
    with pytest.raises(SymbolSetMismatch):
        score_connections(ConnectionMatrix.empty(["A", "B"]), truth)


def test_score_connections_swap_property():
    rng = np.random.default_rng(3)
    ids = [f"S{i}" for i in range(6)]
    pairs = list(itertools.combinations(ids, 2))
    for _ in range(50):
        p = ConnectionMatrix.from_edges(ids, [e for e in pairs if rng.random() < 0.4])
        t = ConnectionMatrix.from_edges(ids, [e for e in pairs if rng.random() < 0.4])
        a, b = score_connections(p, t), score_connections(t, p)
        assert (a.tp, a.fp, a.fn, a.tn) == (b.tp, b.fn, b.fp, b.tn)
        assert a.total == len(pairs)


def test_recall_by_path_kind():
    ids = ["A", "B", "C"]
    truth = ConnectionMatrix.from_edges(ids, [("A", "B"), ("A", "C"), ("B", "C")])
    pred = ConnectionMatrix.from_edges(ids, [("A", "B")])
    by = score_connections_by_path(pred, truth, {("A", "C"): "junction", ("B", "C"): "junction"})
    assert by == {"direct": ConfusionCounts(tp=1), "junction": ConfusionCounts(fn=2)}


def test_report_formats():
    counts = ConfusionCounts(tp=116, fp=11, fn=39, tn=400)
    curve = average_precision([sym("P", "Valve", 0, 0, 10, 10, 0.7)], [sym("T", "Valve", 0, 0, 10, 10)])
    j = report_to_json("connections", counts, extra={"recall_by_path": {"direct": 1.0}})
    assert j["counts"] == {"tp": 116, "fp": 11, "fn": 39, "tn": 400}
    assert j["metrics"]["recall"] == 0.748387
    assert j["recall_by_path"] == {"direct": 1.0}
    assert "ap" not in j
    table = report_table("connections", counts)
    assert ["recall", "74.84", "%"] in [line.split() for line in table.splitlines()]
    assert "(total 566)" in table
    rows = list(csv.reader(io.StringIO(pr_curve_csv(curve))))
    assert rows == [["threshold", "recall", "precision"], ["0.700000", "1.000000", "1.000000"]]
    assert pr_curve_csv(None) == "threshold,recall,precision\n"
