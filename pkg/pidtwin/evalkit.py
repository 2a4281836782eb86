"""Evaluation: binary-classification metrics, detection matching, PR curves / AP, connection scoring."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .errors import SymbolSetMismatch
from .plancore import BoundingBox, box_iou
from .symdetect import SymbolDetection
from .topoderive import ConnectionMatrix

log = logging.getLogger("pidtwin.evalkit")

METRIC_NAMES = ("recall", "precision", "f1", "accuracy", "specificity", "npv")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def sum(cls, items: Iterable[ConfusionCounts]) -> ConfusionCounts:
        out = cls()
        for c in items:
            out = out + c
        return out


@dataclass(frozen=True)
class MetricReport:
    """None marks a metric whose denominator is zero."""

    recall: float | None
    precision: float | None
    f1: float | None
    accuracy: float | None
    specificity: float | None
    npv: float | None

    def as_dict(self) -> dict[str, float | None]:
        return asdict(self)


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    threshold: float


@dataclass(frozen=True)
class PRCurve:
    """Points ordered by descending score threshold; ap is None when there is no ground truth."""

    points: tuple[PRPoint, ...]
    ap: float | None


@dataclass(frozen=True)
class DetectionMatch:
    flags: tuple[bool, ...]
    pairs: tuple[tuple[str, str], ...]
    counts: ConfusionCounts
    ordered: tuple[SymbolDetection, ...]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    return box_iou(a, b)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(c: ConfusionCounts) -> MetricReport:
    return MetricReport(
        recall=_ratio(c.tp, c.tp + c.fn),
        precision=_ratio(c.tp, c.tp + c.fp),
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        accuracy=_ratio(c.tp + c.tn, c.total),
        specificity=_ratio(c.tn, c.tn + c.fp),
        npv=_ratio(c.tn, c.tn + c.fn),
    )


# ---------------------------------------------------------------------------
# Detection matching and AP
# ---------------------------------------------------------------------------
def _by_score(pred: Sequence[SymbolDetection]) -> list[SymbolDetection]:
    return sorted(pred, key=lambda d: (-d.score, d.id))


def match_detections(
    pred: Sequence[SymbolDetection],
    truth: Sequence[SymbolDetection],
    iou_threshold: float = 0.5,
) -> DetectionMatch:
    """Greedy by descending score; each prediction takes the best unmatched same-class truth."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    ordered = _by_score(pred)
    free = sorted(truth, key=lambda t: t.id)
    flags: list[bool] = []
    pairs: list[tuple[str, str]] = []
    for det in ordered:
        best, best_iou = None, iou_threshold
        for t in free:
            if t.cls != det.cls:
                continue
            overlap = box_iou(det.bbox, t.bbox)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = t, overlap
        if best is None:
            flags.append(False)
        else:
            flags.append(True)
            pairs.append((det.id, best.id))
            free.remove(best)
    tp = len(pairs)
    counts = ConfusionCounts(tp=tp, fp=len(ordered) - tp, fn=len(truth) - tp)
    return DetectionMatch(flags=tuple(flags), pairs=tuple(pairs), counts=counts, ordered=tuple(ordered))


def all_point_ap(recall: Sequence[float], precision: Sequence[float]) -> float:
    """Area under the monotone precision envelope, summed over recall steps."""
    mrec = np.concatenate(([0.0], np.asarray(recall, dtype=float), [1.0]))
    mpre = np.concatenate(([0.0], np.asarray(precision, dtype=float), [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def pr_curve_from_flags(scored: Sequence[tuple[float, bool]], n_truth: int) -> PRCurve:
    """scored: (score, is_true_positive) already in ranking order."""
    if n_truth == 0:
        return PRCurve(points=(), ap=None)
    points = []
    tp = fp = 0
    for score, hit in scored:
        tp += hit
        fp += not hit
        points.append(PRPoint(recall=tp / n_truth, precision=tp / (tp + fp), threshold=score))
    if not points:
        return PRCurve(points=(), ap=0.0)
    ap = all_point_ap([p.recall for p in points], [p.precision for p in points])
    return PRCurve(points=tuple(points), ap=min(1.0, max(0.0, ap)))


def average_precision(
    pred: Sequence[SymbolDetection],
    truth: Sequence[SymbolDetection],
    iou_threshold: float = 0.5,
) -> PRCurve:
    match = match_detections(pred, truth, iou_threshold)
    scored = [(d.score, hit) for d, hit in zip(match.ordered, match.flags, strict=True)]
    return pr_curve_from_flags(scored, len(truth))


def pooled_average_precision(
    plans: Sequence[tuple[str, Sequence[SymbolDetection], Sequence[SymbolDetection]]],
    iou_threshold: float = 0.5,
) -> PRCurve:
    """AP over several plans: matched per plan, ranked together by score."""
    scored: list[tuple[float, str, str, bool]] = []
    n_truth = 0
    for plan_id, pred, truth in plans:
        match = match_detections(pred, truth, iou_threshold)
        scored.extend((d.score, plan_id, d.id, hit) for d, hit in zip(match.ordered, match.flags, strict=True))
        n_truth += len(truth)
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))
    return pr_curve_from_flags([(s[0], s[3]) for s in scored], n_truth)


def per_class_average_precision(
    plans: Sequence[tuple[str, Sequence[SymbolDetection], Sequence[SymbolDetection]]],
    iou_threshold: float = 0.5,
    classes: Sequence[str] | None = None,
) -> tuple[dict[str, PRCurve], float | None]:
    """One PR curve per class and their mean AP (classes without ground truth left out of the mean)."""
    names = sorted(classes) if classes is not None else sorted(
        {d.cls for _, pred, truth in plans for d in (*pred, *truth)}
    )
    curves = {
        cls: pooled_average_precision(
            [(pid, [d for d in pred if d.cls == cls], [t for t in truth if t.cls == cls]) for pid, pred, truth in plans],
            iou_threshold,
        )
        for cls in names
    }
    aps = [c.ap for c in curves.values() if c.ap is not None]
    return curves, (sum(aps) / len(aps) if aps else None)


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------
def _aligned(pred: ConnectionMatrix, truth: ConnectionMatrix) -> ConnectionMatrix:
    if set(pred.symbol_ids) != set(truth.symbol_ids):
        missing = sorted(set(truth.symbol_ids) - set(pred.symbol_ids))
        extra = sorted(set(pred.symbol_ids) - set(truth.symbol_ids))
        raise SymbolSetMismatch(f"symbol sets differ: missing {missing}, extra {extra}")
    return pred if pred.symbol_ids == truth.symbol_ids else pred.reordered(truth.symbol_ids)


def score_connections(pred: ConnectionMatrix, truth: ConnectionMatrix) -> ConfusionCounts:
    """Every unordered symbol pair of the plan is one classification element."""
    p = _aligned(pred, truth).cells
    t = truth.cells
    upper = np.triu(np.ones_like(t, dtype=bool), k=1)
    return ConfusionCounts(
        tp=int((p & t & upper).sum()),
        fp=int((p & ~t & upper).sum()),
        fn=int((~p & t & upper).sum()),
        tn=int((~p & ~t & upper).sum()),
    )


def score_connections_by_path(
    pred: ConnectionMatrix,
    truth: ConnectionMatrix,
    path_kinds: Mapping[tuple[str, str], str],
) -> dict[str, ConfusionCounts]:
    """Recall split by the kind of ground-truth path (e.g. 'direct' vs 'junction').

    Truth edges absent from path_kinds count as 'direct'. Only tp/fn are
    meaningful per kind.
    """
    p = _aligned(pred, truth)
    out: dict[str, ConfusionCounts] = {}
    for a, b in truth.edges():
        kind = path_kinds.get((a, b), path_kinds.get((b, a), "direct"))
        hit = p.connected(a, b)
        out[kind] = out.get(kind, ConfusionCounts()) + ConfusionCounts(tp=int(hit), fn=int(not hit))
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# Report formats
# ---------------------------------------------------------------------------
def _rounded(value: float | None) -> float | None:
    return None if value is None else round(value, 6)


def report_to_json(
    mode: str,
    counts: ConfusionCounts,
    curve: PRCurve | None = None,
    per_class: Mapping[str, PRCurve] | None = None,
    mean_ap: float | None = None,
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    out: dict[str, Any] = {
        "mode": mode,
        "counts": asdict(counts),
        "metrics": {k: _rounded(v) for k, v in metrics(counts).as_dict().items()},
    }
    if curve is not None:
        out["ap"] = _rounded(curve.ap)
    if per_class is not None:
        out["per_class_ap"] = {cls: _rounded(c.ap) for cls, c in sorted(per_class.items())}
        out["mean_ap"] = _rounded(mean_ap)
    if extra:
        out.update(extra)
    return out


def _pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100 * value:6.2f} %"


def report_table(mode: str, counts: ConfusionCounts, curve: PRCurve | None = None,
                 per_class: Mapping[str, PRCurve] | None = None) -> str:
    report = metrics(counts)
    lines = [
        f"mode: {mode}",
        f"counts: tp={counts.tp} fp={counts.fp} fn={counts.fn} tn={counts.tn} (total {counts.total})",
        "",
        f"{'metric':<12} value",
    ]
    lines += [f"{name:<12} {_pct(getattr(report, name))}" for name in METRIC_NAMES]
    if curve is not None:
        lines.append(f"{'AP':<12} {_pct(curve.ap)}")
    if per_class:
        lines.append("")
        lines += [f"AP {cls:<9} {_pct(c.ap)}" for cls, c in sorted(per_class.items())]
    return "\n".join(lines) + "\n"


def pr_curve_csv(curve: PRCurve | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "recall", "precision"])
    for p in curve.points if curve is not None else ():
        writer.writerow([f"{p.threshold:.6f}", f"{p.recall:.6f}", f"{p.precision:.6f}"])
    return buf.getvalue()
