"""Single-scale detection head: grid geometry, target encoding, decoding.

Grids are (S, S, B, 5 + C) float64 arrays indexed [row, col, anchor, field],
where row is the y cell index and col the x cell index. The per-anchor
record is [confidence, x_offset, y_offset, width, height, class_0..C-1].
Box fields use the cell-relative parameterization: offsets are
``cx * S - col`` and ``cy * S - row`` (in [0, 1) for an owned object),
widths and heights are absolute normalized sizes. No squashing link
functions are applied; raw values are penalized directly by the losses and
clamped only when decoding for reporting.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np

from .errors import IoFailure, ShapeMismatch
from .geometry import Box, Detection, rank_key

SIZE_FLOOR = 1e-6

DEFAULT_ANCHORS = ((0.15, 0.25), (0.25, 0.40), (0.35, 0.55), (0.50, 0.75))


@dataclass(frozen=True)
class HeadConfig:
    """Geometry of the head: grid size, anchors per cell, class count."""

    grid_size: int = 13
    anchors_per_cell: int = 4
    num_classes: int = 36
    anchors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS

    def __post_init__(self):
        if self.grid_size < 1 or self.anchors_per_cell < 1 or self.num_classes < 1:
            raise ValueError(f"non-positive head dimensions: {self}")
        if len(self.anchors) != self.anchors_per_cell:
            raise ValueError(
                f"need {self.anchors_per_cell} anchors, got {len(self.anchors)}"
            )
        if any(w <= 0 or h <= 0 for w, h in self.anchors):
            raise ValueError(f"anchors must be positive, got {self.anchors}")

    @property
    def record_size(self) -> int:
        return 5 + self.num_classes

    @property
    def channels(self) -> int:
        """Output channels of the head: B * (5 + C)."""
        return self.anchors_per_cell * self.record_size

    def zeros(self) -> np.ndarray:
        return np.zeros(
            (self.grid_size, self.grid_size, self.anchors_per_cell, self.record_size)
        )


@dataclass(frozen=True)
class CellCollision:
    """Two objects mapped to the same (cell, anchor); the later one was dropped."""

    col: int
    row: int
    anchor: int
    kept_object: int
    dropped_object: int


@dataclass
class TargetGrid:
    cfg: HeadConfig
    values: np.ndarray
    collisions: tuple[CellCollision, ...] = ()


@dataclass
class PredictionGrid:
    cfg: HeadConfig
    values: np.ndarray


def shape_iou(w1: float, h1: float, w2: float, h2: float) -> float:
    """IoU of two sizes as boxes sharing one center."""
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def best_anchor(cfg: HeadConfig, w: float, h: float) -> int:
    """Anchor index with highest shape IoU; ties go to the lowest index."""
    best, best_iou = 0, -1.0
    for idx, (aw, ah) in enumerate(cfg.anchors):
        v = shape_iou(w, h, aw, ah)
        if v > best_iou:
            best, best_iou = idx, v
    return best


def assign_targets(objects: list[tuple[int, Box]], cfg: HeadConfig) -> TargetGrid:
    """Encode ground-truth objects into a target grid.

    Each object is owned by the cell containing its center and, within it,
    by the best shape-IoU anchor. The owned slot gets confidence 1, the
    cell-relative box, and a one-hot class row; everything else stays zero.
    A second object landing on an owned slot is dropped and reported in
    ``collisions``.
    """
    s = cfg.grid_size
    values = cfg.zeros()
    owner: dict[tuple[int, int, int], int] = {}
    collisions: list[CellCollision] = []
    for index, (class_id, box) in enumerate(objects):
        if not (0 <= class_id < cfg.num_classes):
            raise ValueError(f"object {index}: class id {class_id} outside [0, {cfg.num_classes})")
        if not box.inside_unit_image():
            raise ValueError(f"object {index}: box {box} leaves the unit image")
        col = min(int(box.cx * s), s - 1)
        row = min(int(box.cy * s), s - 1)
        anchor = best_anchor(cfg, box.w, box.h)
        slot = (row, col, anchor)
        if slot in owner:
            collisions.append(CellCollision(col, row, anchor, owner[slot], index))
            continue
        owner[slot] = index
        values[row, col, anchor, 0] = 1.0
        values[row, col, anchor, 1] = box.cx * s - col
        values[row, col, anchor, 2] = box.cy * s - row
        values[row, col, anchor, 3] = box.w
        values[row, col, anchor, 4] = box.h
        values[row, col, anchor, 5 + class_id] = 1.0
    return TargetGrid(cfg, values, tuple(collisions))


def decode_box(cfg: HeadConfig, row: int, col: int, fields: np.ndarray) -> Box:
    """Map one slot's box fields back to normalized image coordinates."""
    s = cfg.grid_size
    return Box(
        (col + float(fields[0])) / s,
        (row + float(fields[1])) / s,
        max(float(fields[2]), SIZE_FLOOR),
        max(float(fields[3]), SIZE_FLOOR),
    )


def decode(pred: PredictionGrid, cfg: HeadConfig, conf_threshold: float) -> list[Detection]:
    """Emit detections for every slot with confidence >= conf_threshold.

    Detection confidence is slot confidence times the best class
    probability, clamped to [0, 1] for reporting; the class is the argmax.
    Results are sorted by descending confidence with the NMS tie-break.
    """
    if not (0.0 <= conf_threshold <= 1.0):
        raise ValueError(f"conf_threshold must be in [0, 1], got {conf_threshold}")
    _require_grid_shape(pred.values, cfg)
    detections = []
    rows, cols, anchors = np.nonzero(pred.values[:, :, :, 0] >= conf_threshold)
    for row, col, anchor in zip(rows.tolist(), cols.tolist(), anchors.tolist()):
        record = pred.values[row, col, anchor]
        class_probs = record[5:]
        class_id = int(np.argmax(class_probs))
        confidence = min(max(float(record[0]) * float(class_probs[class_id]), 0.0), 1.0)
        box = decode_box(cfg, row, col, record[1:5])
        detections.append(Detection(box=box, class_id=class_id, confidence=confidence))
    detections.sort(key=rank_key)
    return detections


def _require_grid_shape(values: np.ndarray, cfg: HeadConfig):
    expected = (cfg.grid_size, cfg.grid_size, cfg.anchors_per_cell, cfg.record_size)
    if values.shape != expected:
        raise ShapeMismatch(f"grid shape {values.shape} != {expected}")


# --- layer chains ---

LAYER_KINDS = ("conv", "depthwise_conv", "pointwise_conv", "maxpool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_ch < 1 or self.out_ch < 1 or self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"non-positive layer dimensions: {self}")
        if self.kind in ("depthwise_conv", "maxpool") and self.out_ch != self.in_ch:
            raise ValueError(f"{self.kind} must keep channel count, got {self.in_ch}->{self.out_ch}")
        if self.kind == "pointwise_conv" and self.kernel != 1:
            raise ValueError(f"pointwise_conv kernel must be 1, got {self.kernel}")


def shape_propagate(
    input_shape: tuple[int, int, int], layers: list[LayerSpec]
) -> list[tuple[int, int, int]]:
    """Propagate (height, width, channels) through a layer chain.

    Spatial sizes follow out = floor((in + 2 * padding - kernel) / stride) + 1.
    Raises ShapeMismatch (naming the layer index) on channel breaks or when a
    layer would produce an empty output.
    """
    h, w, ch = input_shape
    shapes = []
    for idx, layer in enumerate(layers):
        if layer.in_ch != ch:
            raise ShapeMismatch(f"layer {idx} ({layer.kind}): expects {layer.in_ch} channels, got {ch}")
        out_h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
        out_w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeMismatch(f"layer {idx} ({layer.kind}): output {out_h}x{out_w} is empty")
        h, w, ch = out_h, out_w, layer.out_ch
        shapes.append((h, w, ch))
    return shapes


def param_count(layers: list[LayerSpec]) -> int:
    """Trainable parameter total for a layer chain."""
    total = 0
    for layer in layers:
        if layer.kind == "conv":
            total += layer.kernel**2 * layer.in_ch * layer.out_ch
            if layer.bias:
                total += layer.out_ch
        elif layer.kind == "depthwise_conv":
            total += layer.kernel**2 * layer.in_ch
            if layer.bias:
                total += layer.in_ch
        elif layer.kind == "pointwise_conv":
            total += layer.in_ch * layer.out_ch
            if layer.bias:
                total += layer.out_ch
        # maxpool has no parameters
    return total


def fit_anchors(
    sizes: list[tuple[float, float]], num_anchors: int, iterations: int = 50, seed: int = 0
) -> tuple[tuple[float, float], ...]:
    """Shape-IoU k-means over (w, h) pairs, for picking anchors from data.

    Deterministic for a given seed. Returns anchors sorted by area.
    """
    if num_anchors < 1:
        raise ValueError("num_anchors must be >= 1")
    if len(sizes) < num_anchors:
        raise ValueError(f"need at least {num_anchors} sizes, got {len(sizes)}")
    rng = random.Random(seed)
    unique = sorted(set(sizes))
    if len(unique) >= num_anchors:
        centers = [list(s) for s in rng.sample(unique, num_anchors)]
    else:
        centers = [list(s) for s in unique]
        while len(centers) < num_anchors:
            centers.append(list(rng.choice(unique)))
    for _ in range(iterations):
        buckets: list[list[tuple[float, float]]] = [[] for _ in centers]
        for w, h in sizes:
            best = max(
                range(len(centers)), key=lambda k: (shape_iou(w, h, *centers[k]), -k)
            )
            buckets[best].append((w, h))
        moved = False
        for k, bucket in enumerate(buckets):
            if not bucket:
                continue
            new_w = sum(w for w, _ in bucket) / len(bucket)
            new_h = sum(h for _, h in bucket) / len(bucket)
            if (new_w, new_h) != tuple(centers[k]):
                centers[k] = [new_w, new_h]
                moved = True
        if not moved:
            break
    return tuple(sorted(((w, h) for w, h in centers), key=lambda s: s[0] * s[1]))


# --- config / grid files ---


def head_config_to_dict(cfg: HeadConfig) -> dict:
    return {
        "grid_size": cfg.grid_size,
        "anchors_per_cell": cfg.anchors_per_cell,
        "num_classes": cfg.num_classes,
        "anchors": [list(a) for a in cfg.anchors],
    }


def head_config_from_dict(doc: dict) -> HeadConfig:
    return HeadConfig(
        grid_size=int(doc["grid_size"]),
        anchors_per_cell=int(doc["anchors_per_cell"]),
        num_classes=int(doc["num_classes"]),
        anchors=tuple((float(w), float(h)) for w, h in doc["anchors"]),
    )


def load_head_config(path: str) -> HeadConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return head_config_from_dict(json.load(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read head config {path}: {exc}") from exc


def layers_from_dict(doc: dict) -> list[LayerSpec]:
    layers = []
    for item in doc["layers"]:
        layers.append(
            LayerSpec(
                kind=item["kind"],
                in_ch=int(item["in_ch"]),
                out_ch=int(item["out_ch"]),
                kernel=int(item["kernel"]),
                stride=int(item.get("stride", 1)),
                padding=int(item.get("padding", 0)),
                bias=bool(item.get("bias", False)),
            )
        )
    return layers


def load_layers(path: str) -> list[LayerSpec]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return layers_from_dict(json.load(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read layer chain {path}: {exc}") from exc


def save_grid(grid: TargetGrid | PredictionGrid, path: str):
    """Persist a grid as JSON: config, kind tag, row-major flattened values."""
    doc = head_config_to_dict(grid.cfg)
    doc["kind"] = "target" if isinstance(grid, TargetGrid) else "prediction"
    doc["values"] = grid.values.reshape(-1).tolist()
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write grid {path}: {exc}") from exc


def load_grid(path: str) -> TargetGrid | PredictionGrid:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read grid {path}: {exc}") from exc
    cfg = head_config_from_dict(doc)
    values = np.asarray(doc["values"], dtype=np.float64)
    expected = cfg.grid_size * cfg.grid_size * cfg.anchors_per_cell * cfg.record_size
    if values.size != expected:
        raise ShapeMismatch(f"grid file {path}: {values.size} values, expected {expected}")
    values = values.reshape(cfg.grid_size, cfg.grid_size, cfg.anchors_per_cell, cfg.record_size)
    if doc.get("kind") == "target":
        return TargetGrid(cfg, values)
    return PredictionGrid(cfg, values)
