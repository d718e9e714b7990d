"""Detection evaluation: greedy matching, per-class AP, mAP, and P/R/F1.

AP uses 101-point interpolation (COCO convention). The P/R operating point
is the global confidence threshold that maximizes micro-averaged F1, with
matching at IoU 0.5; F1 is NaN exactly when P + R == 0.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from scriptorium import kernels
from scriptorium.core import Annotation, DatasetCOCO, Detection
from scriptorium.errors import LeakageError, ValidationError

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
_RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class MatchOutcome:
    """Greedy matching result for one class at one IoU threshold.

    Parallel tuples are ordered by score descending (ties: input order);
    ``det_indices`` point back into the caller's detection list.
    """

    det_indices: tuple[int, ...]
    scores: tuple[float, ...]
    tp_flags: tuple[bool, ...]
    matched_gt_ids: tuple[int | None, ...]
    fn_count: int
    gt_count: int

    @property
    def tp_count(self) -> int:
        return sum(self.tp_flags)


@dataclass(frozen=True)
class MetricsReport:
    map50: float
    map5095: float
    precision: float
    recall: float
    f1: float
    per_class_ap50: dict[int, float]

    def to_dict(self) -> dict:
        """JSON-safe form; NaN f1 becomes null."""
        return {
            "map50": self.map50,
            "map5095": self.map5095,
            "precision": self.precision,
            "recall": self.recall,
            "f1": None if math.isnan(self.f1) else self.f1,
            "per_class_ap50": {str(k): v for k, v in sorted(self.per_class_ap50.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        f1 = data["f1"]
        return cls(
            map50=data["map50"],
            map5095=data["map5095"],
            precision=data["precision"],
            recall=data["recall"],
            f1=float("nan") if f1 is None else float(f1),
            per_class_ap50={int(k): v for k, v in data["per_class_ap50"].items()},
        )


def f1_score(precision: float, recall: float) -> float:
    """2PR/(P+R); NaN exactly when P + R == 0."""
    if precision + recall == 0:
        return float("nan")
    return 2.0 * precision * recall / (precision + recall)


def _global_order(dets: list[Detection], class_id: int) -> list[int]:
    """Indices of detections of one class, score descending, ties by index."""
    idx = [i for i, d in enumerate(dets) if d.category_id == class_id]
    idx.sort(key=lambda i: (-dets[i].score, i))
    return idx


def match_detections(
    dets: list[Detection],
    gts: list[Annotation],
    class_id: int,
    iou_thr: float,
) -> MatchOutcome:
    """Greedy per-image matching of one class across the whole detection set."""
    if not 0.0 < iou_thr <= 1.0:
        raise ValidationError(f"iou threshold {iou_thr} outside (0, 1]")
    order = _global_order(dets, class_id)
    class_gts = [g for g in gts if g.category_id == class_id]

    gt_by_image: dict[int, list[Annotation]] = {}
    for g in sorted(class_gts, key=lambda g: g.id):
        gt_by_image.setdefault(g.image_id, []).append(g)

    det_by_image: dict[int, list[int]] = {}
    for i in order:
        det_by_image.setdefault(dets[i].image_id, []).append(i)

    matched_gt: dict[int, int] = {}  # det index -> gt id
    for image_id, det_idx in det_by_image.items():
        img_gts = gt_by_image.get(image_id, [])
        if not img_gts:
            continue
        det_boxes = np.array(
            [[dets[i].bbox.x, dets[i].bbox.y, dets[i].bbox.w, dets[i].bbox.h] for i in det_idx]
        )
        gt_boxes = np.array([[g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h] for g in img_gts])
        assignment = kernels.greedy_match(det_boxes, gt_boxes, iou_thr)
        for i, j in zip(det_idx, assignment):
            if j >= 0:
                matched_gt[i] = img_gts[j].id

    return MatchOutcome(
        det_indices=tuple(order),
        scores=tuple(dets[i].score for i in order),
        tp_flags=tuple(i in matched_gt for i in order),
        matched_gt_ids=tuple(matched_gt.get(i) for i in order),
        fn_count=len(class_gts) - len(matched_gt),
        gt_count=len(class_gts),
    )


def _ap_from_outcome(outcome: MatchOutcome) -> float | None:
    """101-point interpolated AP; None when the class has no ground truth."""
    if outcome.gt_count == 0:
        return None
    if not outcome.det_indices:
        return 0.0
    tp = np.cumsum(np.asarray(outcome.tp_flags, dtype=np.float64))
    n = np.arange(1, len(outcome.det_indices) + 1, dtype=np.float64)
    precision = tp / n
    recall = tp / outcome.gt_count
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    pos = np.searchsorted(recall, _RECALL_LEVELS, side="left")
    vals = np.where(pos < len(recall), envelope[np.minimum(pos, len(recall) - 1)], 0.0)
    return float(vals.mean())


def average_precision(
    dets: list[Detection], gts: list[Annotation], class_id: int, iou_thr: float
) -> float | None:
    return _ap_from_outcome(match_detections(dets, gts, class_id, iou_thr))


def _operating_point(outcomes_50: list[MatchOutcome]) -> tuple[float, float]:
    """Precision/recall at the global max-micro-F1 confidence threshold.

    Greedy matching in score order means a detection's assignment does not
    depend on lower-scored detections, so one full match per class suffices:
    restricting to scores >= t keeps exactly the matches of the kept ones.
    """
    total_gt = sum(o.gt_count for o in outcomes_50)
    scores = np.array([s for o in outcomes_50 for s in o.scores])
    flags = np.array([f for o in outcomes_50 for f in o.tp_flags], dtype=np.float64)
    if scores.size == 0:
        return 0.0, 0.0
    desc = np.argsort(-scores, kind="stable")
    scores, flags = scores[desc], flags[desc]
    tp_cum = np.cumsum(flags)
    n_cum = np.arange(1, scores.size + 1, dtype=np.float64)
    # candidate thresholds: last position of each distinct score (>= is inclusive)
    last = np.nonzero(np.diff(scores, append=-np.inf))[0]
    f1_sel = 2.0 * tp_cum[last] / (n_cum[last] + total_gt)
    # argmax, ties resolved toward the higher threshold (earlier position)
    best = last[int(np.argmax(f1_sel))]
    tp = tp_cum[best]
    kept = n_cum[best]
    precision = float(tp / kept) if kept else 0.0
    recall = float(tp / total_gt) if total_gt else 0.0
    return precision, recall


def evaluate(dets: list[Detection], gts: DatasetCOCO, jobs: int = 1) -> MetricsReport:
    """Full metrics over a test dataset; detections must reference it only."""
    test_ids = {img.id for img in gts.images}
    for d in dets:
        if d.image_id not in test_ids:
            raise LeakageError(
                f"detection references image {d.image_id} outside the test set"
            )

    anns = list(gts.annotations)
    classes = sorted({a.category_id for a in anns})

    def ap_at(thr: float) -> dict[int, float]:
        return {
            c: _ap_from_outcome(match_detections(dets, anns, c, thr)) for c in classes
        }

    if jobs > 1 and classes:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_thr = list(pool.map(ap_at, IOU_THRESHOLDS))
    else:
        per_thr = [ap_at(t) for t in IOU_THRESHOLDS]

    def mean_ap(by_class: dict[int, float]) -> float:
        vals = [v for v in by_class.values() if v is not None]
        return float(np.mean(vals)) if vals else 0.0

    per_class_ap50 = {c: v for c, v in per_thr[0].items() if v is not None}
    map50 = mean_ap(per_thr[0])
    map5095 = float(np.mean([mean_ap(b) for b in per_thr])) if per_thr else 0.0

    # micro P/R pools every detection class: a detection of a class with no
    # ground truth in the test set is a false positive, not an exclusion
    pr_classes = sorted(set(classes) | {d.category_id for d in dets})
    outcomes_50 = [match_detections(dets, anns, c, 0.5) for c in pr_classes]
    precision, recall = _operating_point(outcomes_50)

    return MetricsReport(
        map50=map50,
        map5095=map5095,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        per_class_ap50=per_class_ap50,
    )


def format_percent(v: float) -> str:
    """Table-style rendering: one decimal, literal NaN."""
    if math.isnan(v):
        return "NaN"
    return f"{100.0 * v:.1f}"


def report_to_table2_dict(report: MetricsReport) -> dict:
    """MetricsReport as percentages at one decimal; NaN rendered literally."""

    def pct(v: float):
        return "NaN" if math.isnan(v) else round(100.0 * v, 1)

    return {
        "map50": pct(report.map50),
        "map5095": pct(report.map5095),
        "precision": pct(report.precision),
        "recall": pct(report.recall),
        "f1": pct(report.f1),
        "per_class_ap50": {
            str(k): pct(v) for k, v in sorted(report.per_class_ap50.items())
        },
    }
