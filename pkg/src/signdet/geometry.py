"""Axis-aligned box arithmetic: IoU, GIoU, enclosing boxes, and NMS.

Boxes use normalized center format (cx, cy, w, h). All functions are pure
and operate on immutable values, so they are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EDGE_TOLERANCE = 1e-9


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned bounding box in center format.

    cx, cy locate the center and w, h the side lengths, all in image-relative
    units (a full-image box is (0.5, 0.5, 1, 1)). Sizes must be positive and
    finite; degenerate zero-area boxes are rejected at construction. Whether
    the box lies inside the unit image is a property of annotation data, not
    of the type: geometry on unnormalized or out-of-image boxes is legal (and
    needed for enclosing-box penalties on raw predictions), so that check
    lives in :meth:`inside_unit_image` and the annotation validators.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} must be finite, got {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) with x1 < x2 and y1 < y2."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def inside_unit_image(self, tol: float = EDGE_TOLERANCE) -> bool:
        x1, y1, x2, y2 = self.corners
        return x1 >= -tol and y1 >= -tol and x2 <= 1 + tol and y2 <= 1 + tol


@dataclass(frozen=True)
class Detection:
    """A decoded detection: box plus class id and confidence."""

    box: Box
    class_id: int
    confidence: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def area(b: Box) -> float:
    """Box area, w * h."""
    return b.w * b.h


def iou(a: Box, b: Box) -> float:
    """Intersection over union. Symmetric, in [0, 1], 1 iff equal point sets.

    Areas come from the same corner extents as the intersection, so equal
    point sets give exactly 1.0 despite center/size rounding.
    """
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def enclosing(a: Box, b: Box) -> Box:
    """Smallest axis-aligned box containing both inputs.

    Containment cases return the containing input itself, keeping
    enclosing(a, a) == a exact.
    """
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    hull = (min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))
    if hull == (ax1, ay1, ax2, ay2):
        return a
    if hull == (bx1, by1, bx2, by2):
        return b
    return Box.from_corners(*hull)


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the enclosing box's empty-slack fraction.

    giou = iou - (area(enclosing) - area(union)) / area(enclosing), which
    lies in (-1, 1] and equals iou when the enclosing box is exactly the
    union (e.g. one box inside the other).
    """
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    enc = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (enc - union) / enc


def enclosing_slack(a: Box, b: Box) -> float:
    """(area(enclosing) - area(union)) / area(enclosing), the GIoU penalty term."""
    return iou(a, b) - giou(a, b)


def rank_key(d: Detection):
    """Deterministic visit order: confidence desc, then class, center, size
    ascending. Shared by NMS, decoding, and evaluation matching."""
    return (-d.confidence, d.class_id, d.box.cx, d.box.cy, d.box.w, d.box.h)


def nms(dets: list[Detection], iou_threshold: float, class_aware: bool = True) -> list[Detection]:
    """Greedy non-maximum suppression.

    Detections are visited in descending confidence (ties broken by class id,
    then cx, cy, w, h ascending); each kept detection suppresses later ones
    whose IoU with it is strictly greater than ``iou_threshold``. With
    ``class_aware`` only same-class pairs suppress each other. Survivors are
    returned in visit order, fields untouched.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    ordered = sorted(dets, key=rank_key)
    kept: list[Detection] = []
    for d in ordered:
        suppressed = False
        for k in kept:
            if class_aware and k.class_id != d.class_id:
                continue
            if iou(k.box, d.box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(d)
    return kept
