"""Detection losses over (prediction, target) grids, with exact gradients.

All four components are plain double sums over every cell and anchor, with
zero targets at unassigned slots; there is no separate no-object weight.
Confidences and class probabilities are raw reals (no sigmoid/softmax), so
the squared-error components are exactly quadratic in the prediction. The
box-overlap component runs over assigned slots only:

    sum of  1 - iou(b, b*) + giou_weight * (enclosure_slack)

where the slack is (area(enclosing) - area(union)) / area(enclosing), i.e.
with giou_weight = 1 each term is 1 - giou(b, b*). Predicted box sizes are
clamped at 1e-6 before the overlap math so the term stays defined for
degenerate raw predictions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .detector import (
    SIZE_FLOOR,
    HeadConfig,
    PredictionGrid,
    TargetGrid,
    assign_targets,
    decode_box,
)
from .errors import CollisionError, Diverged, ShapeMismatch
from .geometry import Box

DIVERGENCE_CEILING = 1e6


@dataclass(frozen=True)
class LossWeights:
    """Non-negative multipliers for the four components."""

    conf: float = 1.0
    cls: float = 1.0
    loc: float = 1.0
    giou: float = 1.0

    def __post_init__(self):
        if min(self.conf, self.cls, self.loc, self.giou) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


@dataclass(frozen=True)
class LossBreakdown:
    conf: float
    cls: float
    loc: float
    giou: float
    total: float


def _arrays(pred: PredictionGrid, target: TargetGrid) -> tuple[np.ndarray, np.ndarray]:
    if pred.values.shape != target.values.shape:
        raise ShapeMismatch(
            f"prediction grid {pred.values.shape} vs target grid {target.values.shape}"
        )
    return pred.values, target.values


def loss_conf(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> float:
    p, t = _arrays(pred, target)
    return w.conf * float(np.sum((t[..., 0] - p[..., 0]) ** 2))


def loss_cls(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> float:
    p, t = _arrays(pred, target)
    return w.cls * float(np.sum((t[..., 5:] - p[..., 5:]) ** 2))


def loss_loc(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> float:
    p, t = _arrays(pred, target)
    return w.loc * float(np.sum((t[..., 1:5] - p[..., 1:5]) ** 2))


def _assigned_slots(target: TargetGrid):
    rows, cols, anchors = np.nonzero(target.values[..., 0] == 1.0)
    return zip(rows.tolist(), cols.tolist(), anchors.tolist())


def _overlap_term(pred_box: Box, gt_box: Box, giou_weight: float) -> float:
    # Areas from the same corner extents as the intersection, so a perfect
    # prediction yields exactly 0.
    px1, py1, px2, py2 = pred_box.corners
    gx1, gy1, gx2, gy2 = gt_box.corners
    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    enc = (max(px2, gx2) - min(px1, gx1)) * (max(py2, gy2) - min(py1, gy1))
    return 1.0 - inter / union + giou_weight * (enc - union) / enc


def loss_giou(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> float:
    """The standalone overlap component, always per the literal formula:
    with giou weight 0 it still reports the residual sum of 1 - iou."""
    p, t = _arrays(pred, target)
    cfg = target.cfg
    total = 0.0
    for row, col, anchor in _assigned_slots(target):
        gt_box = decode_box(cfg, row, col, t[row, col, anchor, 1:5])
        pred_box = decode_box(cfg, row, col, p[row, col, anchor, 1:5])
        total += _overlap_term(pred_box, gt_box, w.giou)
    return total


def total_loss(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> LossBreakdown:
    """Component breakdown; total is exactly their sum.

    Setting a weight to 0 removes its component entirely. For the overlap
    term this gates the whole 1 - iou + slack expression (not just the
    slack), so weight tuples like (1, 1, 1, 0) leave a purely quadratic
    objective; the inner constant-1 residual would otherwise keep a kinked
    gradient alive at the optimum.
    """
    conf = loss_conf(pred, target, w)
    cls = loss_cls(pred, target, w)
    loc = loss_loc(pred, target, w)
    giou = loss_giou(pred, target, w) if w.giou > 0 else 0.0
    return LossBreakdown(conf=conf, cls=cls, loc=loc, giou=giou, total=conf + cls + loc + giou)


def _overlap_gradient(
    cfg: HeadConfig, row: int, col: int, pred_fields: np.ndarray, gt_box: Box, giou_weight: float
) -> np.ndarray:
    """d(overlap term)/d(x_offset, y_offset, width, height) at one slot.

    Corner-alignment ties take the one-sided derivative from the positive
    perturbation direction; the same convention gates the size clamp.
    """
    s = cfg.grid_size
    raw_w = float(pred_fields[2])
    raw_h = float(pred_fields[3])
    pred_box = decode_box(cfg, row, col, pred_fields)
    px1, py1, px2, py2 = pred_box.corners
    gx1, gy1, gx2, gy2 = gt_box.corners

    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    overlapping = iw > 0 and ih > 0
    inter = iw * ih if overlapping else 0.0
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    ex = max(px2, gx2) - min(px1, gx1)
    ey = max(py2, gy2) - min(py1, gy1)
    enc = ex * ey

    # Partials with respect to the four predicted corners.
    def d_corner(c_pred: float, c_gt: float, is_min_side: bool) -> tuple[float, float]:
        # Returns (d_intersection_extent, d_enclosing_extent) along this axis.
        if is_min_side:  # x1/y1: -max(pred, gt) in the overlap, -min(pred, gt) in the hull
            return (-1.0 if c_pred >= c_gt else 0.0, -1.0 if c_pred < c_gt else 0.0)
        return (1.0 if c_pred < c_gt else 0.0, 1.0 if c_pred >= c_gt else 0.0)

    diw_dx1, dex_dx1 = d_corner(px1, gx1, True)
    diw_dx2, dex_dx2 = d_corner(px2, gx2, False)
    dih_dy1, dey_dy1 = d_corner(py1, gy1, True)
    dih_dy2, dey_dy2 = d_corner(py2, gy2, False)

    grads = np.zeros(4)
    for field_idx, (dx1, dx2, dy1, dy2) in enumerate(
        (
            (1.0 / s, 1.0 / s, 0.0, 0.0),  # x offset moves both x corners
            (0.0, 0.0, 1.0 / s, 1.0 / s),  # y offset
            (-0.5, 0.5, 0.0, 0.0),  # width widens symmetrically
            (0.0, 0.0, -0.5, 0.5),  # height
        )
    ):
        if field_idx == 2 and raw_w < SIZE_FLOOR:
            continue  # clamped: raw value has no effect
        if field_idx == 3 and raw_h < SIZE_FLOOR:
            continue
        d_iw = diw_dx1 * dx1 + diw_dx2 * dx2
        d_ih = dih_dy1 * dy1 + dih_dy2 * dy2
        d_inter = (d_iw * ih + iw * d_ih) if overlapping else 0.0
        d_area_p = (
            (dx2 - dx1) * pred_box.h + (dy2 - dy1) * pred_box.w
        )  # area via corner extents
        d_union = d_area_p - d_inter
        d_ex = dex_dx1 * dx1 + dex_dx2 * dx2
        d_ey = dey_dy1 * dy1 + dey_dy2 * dy2
        d_enc = d_ex * ey + ex * d_ey
        d_iou = (d_inter * union - inter * d_union) / (union * union)
        d_ratio = (d_union * enc - union * d_enc) / (enc * enc)  # d(union/enclosing)
        grads[field_idx] = -d_iou - giou_weight * d_ratio
    return grads


def grad_total(pred: PredictionGrid, target: TargetGrid, w: LossWeights) -> np.ndarray:
    """Exact partial derivatives of total_loss in every prediction value."""
    p, t = _arrays(pred, target)
    cfg = target.cfg
    grad = np.zeros_like(p)
    grad[..., 0] = 2.0 * w.conf * (p[..., 0] - t[..., 0])
    grad[..., 1:5] = 2.0 * w.loc * (p[..., 1:5] - t[..., 1:5])
    grad[..., 5:] = 2.0 * w.cls * (p[..., 5:] - t[..., 5:])
    if w.giou > 0:  # mirrors total_loss's component gating
        for row, col, anchor in _assigned_slots(target):
            gt_box = decode_box(cfg, row, col, t[row, col, anchor, 1:5])
            grad[row, col, anchor, 1:5] += _overlap_gradient(
                cfg, row, col, p[row, col, anchor, 1:5], gt_box, w.giou
            )
    return grad


def finite_difference_grad(
    pred: PredictionGrid, target: TargetGrid, w: LossWeights, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of total_loss; the independent oracle.

    Evaluates the loss itself at perturbed grids and never consults
    grad_total, so the two routes stay separate.
    """
    base = pred.values
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for idx in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[idx] += step
        up = total_loss(PredictionGrid(pred.cfg, bumped.reshape(base.shape)), target, w).total
        bumped[idx] -= 2 * step
        down = total_loss(PredictionGrid(pred.cfg, bumped.reshape(base.shape)), target, w).total
        flat[idx] = (up - down) / (2 * step)
    return grad


@dataclass
class GradCheckResult:
    trials: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-5


def _random_instance(rng: random.Random) -> tuple[PredictionGrid, TargetGrid, LossWeights]:
    s = rng.randint(1, 4)
    b = rng.randint(1, 2)
    c = rng.randint(2, 5)
    anchors = tuple(
        (rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)) for _ in range(b)
    )
    cfg = HeadConfig(grid_size=s, anchors_per_cell=b, num_classes=c, anchors=anchors)
    while True:
        objects = []
        for _ in range(rng.randint(1, 2)):
            w = rng.uniform(0.1, 0.25)
            h = rng.uniform(0.1, 0.25)
            cx = rng.uniform(w / 2 + 0.01, 1 - w / 2 - 0.01)
            cy = rng.uniform(h / 2 + 0.01, 1 - h / 2 - 0.01)
            objects.append((rng.randrange(c), Box(cx, cy, w, h)))
        target = assign_targets(objects, cfg)
        if not target.collisions:
            break
    pred_values = target.values + np.array(
        [rng.uniform(-0.4, 0.4) for _ in range(target.values.size)]
    ).reshape(target.values.shape)
    # Keep assigned slots away from clamp and corner-tie kinks so the
    # finite-difference window never straddles a non-smooth point.
    for row, col, anchor in _assigned_slots(target):
        gt_fields = target.values[row, col, anchor, 1:5]
        gt_box = decode_box(cfg, row, col, gt_fields)
        while True:
            fields = gt_fields + np.array([rng.uniform(-0.15, 0.15) for _ in range(4)])
            fields[2] = abs(fields[2]) + 0.02
            fields[3] = abs(fields[3]) + 0.02
            pred_box = decode_box(cfg, row, col, fields)
            margins = [
                abs(pc - gc)
                for pc, gc in zip(pred_box.corners, gt_box.corners)
            ]
            px1, py1, px2, py2 = pred_box.corners
            gx1, gy1, gx2, gy2 = gt_box.corners
            margins.append(abs(min(px2, gx2) - max(px1, gx1)))
            margins.append(abs(min(py2, gy2) - max(py1, gy1)))
            if min(margins) > 1e-3:
                pred_values[row, col, anchor, 1:5] = fields
                break
    weights = LossWeights(
        conf=rng.uniform(0.2, 2.0),
        cls=rng.uniform(0.2, 2.0),
        loc=rng.uniform(0.2, 2.0),
        giou=rng.uniform(0.2, 2.0),
    )
    return PredictionGrid(cfg, pred_values), target, weights


def gradient_check(trials: int = 100, seed: int = 0, step: float = 1e-5) -> GradCheckResult:
    """Compare analytic and finite-difference gradients on random instances."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(trials):
        pred, target, weights = _random_instance(rng)
        analytic = grad_total(pred, target, weights)
        numeric = finite_difference_grad(pred, target, weights, step=step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return GradCheckResult(trials=trials, max_rel_error=worst)


def initial_grid(cfg: HeadConfig) -> PredictionGrid:
    """Deterministic starting point: confidence 0.5, uniform classes,
    boxes at cell centers with the median anchor size."""
    values = cfg.zeros()
    values[..., 0] = 0.5
    values[..., 1] = 0.5
    values[..., 2] = 0.5
    anchors = np.asarray(cfg.anchors, dtype=np.float64)
    values[..., 3] = float(np.median(anchors[:, 0]))
    values[..., 4] = float(np.median(anchors[:, 1]))
    values[..., 5:] = 1.0 / cfg.num_classes
    return PredictionGrid(cfg, values)


def toy_fit(
    objects: list[tuple[int, Box]],
    cfg: HeadConfig,
    w: LossWeights,
    lr: float = 0.01,
    steps: int = 2000,
) -> tuple[PredictionGrid, list[LossBreakdown]]:
    """Plain gradient descent treating the grid values as free parameters.

    Returns the final grid and the loss trace (step 0 through ``steps``).
    Raises Diverged as soon as the total exceeds 1e6 or stops being finite.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    target = assign_targets(objects, cfg)
    if target.collisions:
        raise CollisionError(f"{len(target.collisions)} objects collide in the target grid")
    pred = initial_grid(cfg)
    trace = [total_loss(pred, target, w)]
    for _ in range(steps):
        gradient = grad_total(pred, target, w)
        pred = PredictionGrid(cfg, pred.values - lr * gradient)
        breakdown = total_loss(pred, target, w)
        trace.append(breakdown)
        if not np.isfinite(breakdown.total) or breakdown.total > DIVERGENCE_CEILING:
            raise Diverged(f"loss {breakdown.total!r} after {len(trace) - 1} steps")
    return pred, trace


def trace_to_csv(trace: list[LossBreakdown]) -> str:
    """Loss trace as ``step,conf,cls,loc,giou,total`` CSV."""
    lines = ["step,conf,cls,loc,giou,total\n"]
    for step_no, b in enumerate(trace):
        lines.append(f"{step_no},{b.conf!r},{b.cls!r},{b.loc!r},{b.giou!r},{b.total!r}\n")
    return "".join(lines)
