"""Independent oracles and random-data generators for the test suite.

Every oracle here is written against the raw definitions (brute force,
rasterization, naive loops) and never calls the implementation path it is
used to check.
"""

from __future__ import annotations

import os
import random

import numpy as np

from signdet.annotation import LabelFile, serialize_yolo
from signdet.geometry import Box, Detection, iou
from signdet.imaging import Raster, rotate_quarter, write_image_file


def rand_box(rng: random.Random, min_size=0.05, max_size=0.5, margin=0.01) -> Box:
    w = rng.uniform(min_size, max_size)
    h = rng.uniform(min_size, max_size)
    cx = rng.uniform(w / 2 + margin, 1 - w / 2 - margin)
    cy = rng.uniform(h / 2 + margin, 1 - h / 2 - margin)
    return Box(cx, cy, w, h)


def rand_detection(rng: random.Random, num_classes=4) -> Detection:
    return Detection(
        box=rand_box(rng),
        class_id=rng.randrange(num_classes),
        confidence=rng.random(),
    )


def _rank(d: Detection):
    return (-d.confidence, d.class_id, d.box.cx, d.box.cy, d.box.w, d.box.h)


def nms_bruteforce(dets, iou_threshold, class_aware=True):
    """O(n^2) reference: repeatedly take the best remaining detection and
    delete everything it suppresses."""
    remaining = sorted(dets, key=_rank)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        survivors = []
        for d in remaining:
            same_class = (not class_aware) or d.class_id == best.class_id
            if same_class and iou(best.box, d.box) > iou_threshold:
                continue
            survivors.append(d)
        remaining = survivors
    return kept


def rasterize_box(box: Box, n: int) -> np.ndarray:
    """n x n occupancy mask: pixel (x, y) is set iff its cell overlaps the box.

    An axis-aligned box is separable, so overlap is tested per axis.
    """
    x1, y1, x2, y2 = box.corners
    lo = np.arange(n) / n
    hi = (np.arange(n) + 1) / n
    x_in = (hi > x1) & (lo < x2)
    y_in = (hi > y1) & (lo < y2)
    return (np.outer(y_in, x_in) * 255).astype(np.uint8)


def mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float]:
    """Tight bounding box of set pixels, in normalized coordinates."""
    ys, xs = np.nonzero(mask)
    n = mask.shape[0]
    return (xs.min() / n, ys.min() / n, (xs.max() + 1) / n, (ys.max() + 1) / n)


def rotated_box_oracle(box: Box, turns: int, n: int = 64) -> tuple[float, float, float, float]:
    """Rasterize, rotate the mask as pixels, take the tight bbox corners."""
    mask = rasterize_box(box, n)
    raster = Raster.from_array(mask)
    rotated = rotate_quarter(raster, turns)
    return mask_bbox(rotated.to_array()[:, :, 0])


def naive_total_loss(pred_values, target_values, grid_size, weights) -> float:
    """Triple-loop scalar recomputation of the full loss definition."""
    s_cells, _, anchors_n, record = pred_values.shape
    num_classes = record - 5
    total = 0.0
    for row in range(s_cells):
        for col in range(s_cells):
            for anchor in range(anchors_n):
                p = pred_values[row, col, anchor]
                t = target_values[row, col, anchor]
                total += weights.conf * (t[0] - p[0]) ** 2
                for k in range(4):
                    total += weights.loc * (t[1 + k] - p[1 + k]) ** 2
                for c in range(num_classes):
                    total += weights.cls * (t[5 + c] - p[5 + c]) ** 2
                if t[0] == 1.0 and weights.giou > 0:
                    gx = (col + t[1]) / grid_size
                    gy = (row + t[2]) / grid_size
                    gw, gh = t[3], t[4]
                    px = (col + p[1]) / grid_size
                    py = (row + p[2]) / grid_size
                    pw, ph = max(p[3], 1e-6), max(p[4], 1e-6)
                    ix = min(px + pw / 2, gx + gw / 2) - max(px - pw / 2, gx - gw / 2)
                    iy = min(py + ph / 2, gy + gh / 2) - max(py - ph / 2, gy - gh / 2)
                    inter = ix * iy if (ix > 0 and iy > 0) else 0.0
                    union = pw * ph + gw * gh - inter
                    ex = max(px + pw / 2, gx + gw / 2) - min(px - pw / 2, gx - gw / 2)
                    ey = max(py + ph / 2, gy + gh / 2) - min(py - ph / 2, gy - gh / 2)
                    enc = ex * ey
                    total += 1 - inter / union + weights.giou * (enc - union) / enc
    return total


def match_oracle(dets, gts, iou_threshold):
    """Greedy matching reference: confidence order, exhaustive candidate scan,
    highest-IoU unmatched same-class ground truth consumed."""
    taken = [False] * len(gts)
    flags = []
    for det in sorted(dets, key=_rank):
        candidates = []
        for gt_idx, (gt_class, gt_box) in enumerate(gts):
            if taken[gt_idx] or gt_class != det.class_id:
                continue
            overlap = iou(det.box, gt_box)
            if overlap >= iou_threshold:
                candidates.append((overlap, -gt_idx))
        if candidates:
            _best, neg_idx = max(candidates)
            taken[-neg_idx] = True
            flags.append(True)
        else:
            flags.append(False)
    return sum(flags), taken


def checker_raster(width: int, height: int, channels: int, seed: int = 0) -> Raster:
    rng = random.Random(seed)
    data = bytes(rng.randrange(256) for _ in range(width * height * channels))
    return Raster(width, height, channels, data)


def write_dataset_tree(
    root: str,
    num_classes: int = 36,
    per_class: int = 6,
    image_size: tuple[int, int] = (8, 8),
    seed: int = 0,
    channels: int = 1,
) -> tuple[str, str]:
    """Write a synthetic tree: images/<name>.p?m and labels/<name>.txt,
    one object per image, per_class images for each class id."""
    rng = random.Random(seed)
    images_dir = os.path.join(root, "images")
    labels_dir = os.path.join(root, "labels")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(labels_dir, exist_ok=True)
    ext = ".pgm" if channels == 1 else ".ppm"
    width, height = image_size
    for class_id in range(num_classes):
        for k in range(per_class):
            name = f"c{class_id:02d}_{k}"
            raster = checker_raster(width, height, channels, seed=rng.randrange(1 << 30))
            write_image_file(os.path.join(images_dir, name + ext), raster)
            box = rand_box(rng, min_size=0.2, max_size=0.5, margin=0.02)
            label = LabelFile(image_id=name, objects=((class_id, box),))
            with open(os.path.join(labels_dir, name + ".txt"), "w", newline="") as fh:
                fh.write(serialize_yolo(label))
    return images_dir, labels_dir
