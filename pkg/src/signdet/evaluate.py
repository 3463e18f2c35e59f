"""Detection evaluation: greedy matching, PR metrics, AP, confusion matrices.

Matching is greedy in descending detection confidence (ties broken like
NMS): a detection is a true positive iff an unmatched ground truth of the
same class overlaps it with IoU >= threshold, and the highest-IoU one is
consumed. Accuracy is per-image top-1 classification over single-object
images. Average precision uses all-points interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IoFailure, MalformedLine
from .geometry import Box, Detection, iou, rank_key


@dataclass
class MatchResult:
    """Per-detection TP/FP flags (input order) and per-ground-truth hits."""

    tp_flags: list[bool]
    matched_gt: list[int | None]
    gt_matched: list[bool]

    @property
    def tp_count(self) -> int:
        return sum(self.tp_flags)

    @property
    def fp_count(self) -> int:
        return len(self.tp_flags) - self.tp_count

    @property
    def gt_count(self) -> int:
        return len(self.gt_matched)


def match(
    dets: list[Detection], gts: list[tuple[int, Box]], iou_threshold: float
) -> MatchResult:
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: rank_key(dets[i]))
    tp_flags = [False] * len(dets)
    matched_gt: list[int | None] = [None] * len(dets)
    gt_matched = [False] * len(gts)
    for det_idx in order:
        det = dets[det_idx]
        best_gt = None
        best_iou = 0.0
        for gt_idx, (gt_class, gt_box) in enumerate(gts):
            if gt_matched[gt_idx] or gt_class != det.class_id:
                continue
            overlap = iou(det.box, gt_box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_gt = gt_idx
                best_iou = overlap
        if best_gt is not None:
            tp_flags[det_idx] = True
            matched_gt[det_idx] = best_gt
            gt_matched[best_gt] = True
    return MatchResult(tp_flags, matched_gt, gt_matched)


def precision_recall(m: MatchResult) -> tuple[float, float]:
    """(precision, recall); both default to 1.0 when their denominator is empty."""
    precision = m.tp_count / len(m.tp_flags) if m.tp_flags else 1.0
    recall = m.tp_count / m.gt_count if m.gt_count else 1.0
    return precision, recall


def top_detection(dets: list[Detection]) -> Detection | None:
    return min(dets, key=rank_key) if dets else None


def accuracy_top1(per_image: list[tuple[list[Detection], int]]) -> float:
    """Fraction of single-object images whose top detection has the right class.

    Images without detections count as wrong; an empty image list yields 0.0.
    """
    if not per_image:
        return 0.0
    correct = 0
    for dets, gt_class in per_image:
        top = top_detection(dets)
        if top is not None and top.class_id == gt_class:
            correct += 1
    return correct / len(per_image)


def average_precision(
    dets_per_image: list[list[Detection]],
    gts_per_image: list[list[tuple[int, Box]]],
    iou_threshold: float,
) -> float:
    """All-points-interpolated AP over parallel per-image lists.

    Detections are swept in global confidence order and matched greedily
    within their own image. With no ground truths the result is 1.0 when
    there are also no detections, else 0.0.
    """
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detection and ground-truth lists must be parallel")
    total_gts = sum(len(gts) for gts in gts_per_image)
    flat = [
        (image_idx, det)
        for image_idx, dets in enumerate(dets_per_image)
        for det in dets
    ]
    if total_gts == 0:
        return 1.0 if not flat else 0.0
    flat.sort(key=lambda pair: (rank_key(pair[1]), pair[0]))
    gt_used = [[False] * len(gts) for gts in gts_per_image]
    tp = np.zeros(len(flat))
    for rank, (image_idx, det) in enumerate(flat):
        gts = gts_per_image[image_idx]
        best_gt = None
        best_iou = 0.0
        for gt_idx, (gt_class, gt_box) in enumerate(gts):
            if gt_used[image_idx][gt_idx] or gt_class != det.class_id:
                continue
            overlap = iou(det.box, gt_box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_gt = gt_idx
                best_iou = overlap
        if best_gt is not None:
            gt_used[image_idx][best_gt] = True
            tp[rank] = 1.0
    if not flat:
        return 0.0
    cum_tp = np.cumsum(tp)
    recalls = cum_tp / total_gts
    precisions = cum_tp / np.arange(1, len(flat) + 1)
    # Precision envelope from the right, then sum over recall increments.
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flat)):
        if recalls[k] > prev_recall:
            ap += (recalls[k] - prev_recall) * envelope[k]
            prev_recall = recalls[k]
    return float(ap)


@dataclass
class ConfusionMatrix:
    """(C+1) x (C+1) counts; row = ground truth, column = prediction,
    index C = background (no detection / spurious)."""

    counts: np.ndarray
    num_classes: int

    @property
    def background(self) -> int:
        return self.num_classes

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes, "counts": self.counts.tolist()}


def confusion(
    per_image: list[tuple[list[Detection], int]],
    num_classes: int,
    conf_threshold: float,
) -> ConfusionMatrix:
    """Top-1 confusion over single-object images.

    Each image increments (gt_class, predicted_class) for its highest-
    confidence detection at or above conf_threshold, or
    (gt_class, background) when there is none.
    """
    counts = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    for dets, gt_class in per_image:
        eligible = [d for d in dets if d.confidence >= conf_threshold]
        top = top_detection(eligible)
        pred_class = top.class_id if top is not None else num_classes
        counts[gt_class, pred_class] += 1
    return ConfusionMatrix(counts=counts, num_classes=num_classes)


# --- prediction files and reports ---


def parse_prediction_line(line: str, num_classes: int, line_no: int = 1) -> Detection:
    """Parse ``<class> <cx> <cy> <w> <h> <conf>``.

    Unlike ground-truth parsing, boxes may leave the unit image (raw decoder
    output is not clamped); sizes must still be positive and the confidence
    must be in [0, 1].
    """
    fields = line.strip().split()
    if len(fields) != 6:
        raise MalformedLine(
            f"expected 6 fields, got {len(fields)}", line_no=line_no, token=line.strip()
        )
    try:
        class_id = int(fields[0])
        values = [float(tok) for tok in fields[1:]]
    except ValueError:
        raise MalformedLine("non-numeric field", line_no=line_no, token=line.strip()) from None
    if any(not math.isfinite(v) for v in values):
        raise MalformedLine("non-finite field", line_no=line_no, token=line.strip())
    if not (0 <= class_id < num_classes):
        raise MalformedLine(
            f"class id {class_id} outside [0, {num_classes})", line_no=line_no, token=fields[0]
        )
    cx, cy, w, h, conf = values
    if w <= 0 or h <= 0:
        raise MalformedLine(f"non-positive box size {w}x{h}", line_no=line_no, token=line.strip())
    if not (0.0 <= conf <= 1.0):
        raise MalformedLine(f"confidence {conf} outside [0, 1]", line_no=line_no, token=fields[5])
    return Detection(box=Box(cx, cy, w, h), class_id=class_id, confidence=conf)


def parse_predictions(text: str, num_classes: int) -> list[Detection]:
    dets = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        dets.append(parse_prediction_line(line, num_classes, line_no=line_no))
    return dets


def read_predictions(path: str, num_classes: int) -> list[Detection]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_predictions(fh.read(), num_classes)
    except OSError as exc:
        raise IoFailure(f"cannot read predictions {path}: {exc}") from exc


def serialize_predictions(dets: list[Detection]) -> str:
    lines = []
    for d in dets:
        b = d.box
        lines.append(
            f"{d.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f} {d.confidence:.6f}\n"
        )
    return "".join(lines)


@dataclass
class EvalReport:
    precision: float
    recall: float
    accuracy: float
    average_precision: float
    confusion: ConfusionMatrix
    images: int
    iou_threshold: float
    conf_threshold: float
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "iou_threshold": self.iou_threshold,
            "conf_threshold": self.conf_threshold,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "average_precision": self.average_precision,
            "confusion": self.confusion.to_dict(),
            "skipped": self.skipped,
        }

    def to_table(self) -> str:
        rows = [
            ("Precision", f"{self.precision:.3f}"),
            ("Recall", f"{self.recall:.3f}"),
            ("Accuracy", f"{self.accuracy * 100:.0f}%"),
            ("Avg. Precision", f"{self.average_precision:.3f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "".join(f"{name:<{width}}  {value}\n" for name, value in rows)


def evaluate_detections(
    dets_per_image: list[list[Detection]],
    gts_per_image: list[list[tuple[int, Box]]],
    num_classes: int,
    iou_threshold: float = 0.5,
    conf_threshold: float = 0.25,
) -> EvalReport:
    """Joint report: box-level PR and AP, plus top-1 accuracy and confusion
    for the single-object images."""
    tp = fp = gt_total = 0
    for dets, gts in zip(dets_per_image, gts_per_image):
        kept = [d for d in dets if d.confidence >= conf_threshold]
        result = match(kept, gts, iou_threshold)
        tp += result.tp_count
        fp += result.fp_count
        gt_total += result.gt_count
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / gt_total if gt_total else 1.0
    ap = average_precision(dets_per_image, gts_per_image, iou_threshold)
    single = [
        (dets, gts[0][0])
        for dets, gts in zip(dets_per_image, gts_per_image)
        if len(gts) == 1
    ]
    accuracy = accuracy_top1(single)
    matrix = confusion(single, num_classes, conf_threshold)
    return EvalReport(
        precision=precision,
        recall=recall,
        accuracy=accuracy,
        average_precision=ap,
        confusion=matrix,
        images=len(dets_per_image),
        iou_threshold=iou_threshold,
        conf_threshold=conf_threshold,
    )


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"
