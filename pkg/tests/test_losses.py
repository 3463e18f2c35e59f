import random

import numpy as np
import pytest

from helpers import naive_total_loss
from signdet.detector import HeadConfig, PredictionGrid, assign_targets, decode
from signdet.errors import CollisionError, Diverged, ShapeMismatch
from signdet.geometry import Box
from signdet.losses import (
    LossBreakdown,
    LossWeights,
    _random_instance,
    finite_difference_grad,
    grad_total,
    gradient_check,
    initial_grid,
    loss_cls,
    loss_conf,
    loss_giou,
    loss_loc,
    total_loss,
    toy_fit,
    trace_to_csv,
)


def tiny_cfg(c=2):
    return HeadConfig(grid_size=1, anchors_per_cell=1, num_classes=c, anchors=((0.3, 0.3),))


@pytest.fixture
def single_target():
    cfg = tiny_cfg()
    return cfg, assign_targets([(0, Box(0.5, 0.5, 0.2, 0.3))], cfg)


def perturbed(values, **slot_fields):
    out = values.copy()
    for key, value in slot_fields.items():
        out[(0, 0, 0) + (int(key[1:]),)] = value
    return out


class TestComponents:
    def test_zero_at_target(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, target.values.copy())
        breakdown = total_loss(pred, target, LossWeights())
        assert breakdown == LossBreakdown(0, 0, 0, 0, 0)

    def test_conf_example(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f0=0.5))
        assert loss_conf(pred, target, LossWeights()) == pytest.approx(0.25)

    def test_conf_linear_in_weight(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f0=0.3))
        one = loss_conf(pred, target, LossWeights(conf=1))
        two = loss_conf(pred, target, LossWeights(conf=2))
        assert two == pytest.approx(2 * one)

    def test_every_component_linear_in_its_weight(self, single_target):
        # proportional for the squared-error terms, affine for the overlap
        # term (its 1 - iou residual does not scale with the weight)
        cfg, target = single_target
        pred = PredictionGrid(
            cfg, perturbed(target.values, f0=0.7, f1=0.6, f2=0.4, f3=0.33, f4=0.21, f5=0.2)
        )
        for component, key in ((loss_conf, "conf"), (loss_cls, "cls"), (loss_loc, "loc")):
            at1 = component(pred, target, LossWeights(**{key: 1.0}))
            at3 = component(pred, target, LossWeights(**{key: 3.0}))
            assert at3 == pytest.approx(3 * at1)
        g0 = loss_giou(pred, target, LossWeights(giou=0.0))
        g1 = loss_giou(pred, target, LossWeights(giou=1.0))
        g2 = loss_giou(pred, target, LossWeights(giou=2.0))
        assert g2 - g1 == pytest.approx(g1 - g0)

    def test_cls_example(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f5=0.6, f6=0.4))
        assert loss_cls(pred, target, LossWeights()) == pytest.approx(0.32)

    def test_cls_permutation_invariant(self):
        cfg = tiny_cfg(c=3)
        target = assign_targets([(1, Box(0.5, 0.5, 0.2, 0.2))], cfg)
        pred_values = target.values.copy()
        pred_values[0, 0, 0, 5:] = (0.2, 0.5, 0.3)
        base = loss_cls(PredictionGrid(cfg, pred_values), target, LossWeights())
        perm = [2, 0, 1]
        target_p = assign_targets([(perm.index(1), Box(0.5, 0.5, 0.2, 0.2))], cfg)
        pred_p = target_p.values.copy()
        pred_p[0, 0, 0, 5:] = tuple(pred_values[0, 0, 0, 5 + perm[i]] for i in range(3))
        # relabeling classes consistently in pred and target leaves the value
        swapped = loss_cls(PredictionGrid(cfg, pred_p), target_p, LossWeights())
        assert swapped == pytest.approx(base)

    def test_loc_example(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f4=0.5))
        assert loss_loc(pred, target, LossWeights()) == pytest.approx(0.04)

    def test_loc_symmetric(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f3=0.4, f4=0.1))
        forward = loss_loc(pred, target, LossWeights())
        swapped = loss_loc(
            PredictionGrid(cfg, target.values),
            type(target)(cfg, pred.values),
            LossWeights(),
        )
        assert swapped == pytest.approx(forward)

    def test_giou_perfect(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, target.values.copy())
        assert loss_giou(pred, target, LossWeights()) == 0.0

    def test_giou_disjoint_four_thirds(self):
        # grid-space setup reproducing corners (0,0,1,1) vs (2,0,3,1): giou -1/3
        cfg = HeadConfig(grid_size=1, anchors_per_cell=1, num_classes=2, anchors=((0.3, 0.3),))
        target = assign_targets([(0, Box(0.1, 0.1, 0.2, 0.2))], cfg)
        pred_values = target.values.copy()
        pred_values[0, 0, 0, 1:5] = (0.5, 0.1, 0.2, 0.2)  # shifted two widths right
        pred = PredictionGrid(cfg, pred_values)
        assert loss_giou(pred, target, LossWeights(giou=1)) == pytest.approx(4 / 3)

    def test_giou_weight_zero_keeps_iou_residual(self, single_target):
        cfg, target = single_target
        pred_values = perturbed(target.values, f3=0.3)
        pred = PredictionGrid(cfg, pred_values)
        bare = loss_giou(pred, target, LossWeights(giou=0))
        gt_box = Box(0.5, 0.5, 0.2, 0.3)
        pred_box = Box(0.5, 0.5, 0.3, 0.3)
        from signdet.geometry import iou

        assert bare == pytest.approx(1 - iou(pred_box, gt_box))

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(conf=-0.1)

    def test_shape_mismatch(self, single_target):
        cfg, target = single_target
        other = HeadConfig(grid_size=2, anchors_per_cell=1, num_classes=2, anchors=((0.3, 0.3),))
        with pytest.raises(ShapeMismatch):
            total_loss(PredictionGrid(other, other.zeros()), target, LossWeights())


class TestTotal:
    def test_sum_identity(self):
        rng = random.Random(100)
        for _ in range(20):
            pred, target, weights = _random_instance(rng)
            b = total_loss(pred, target, weights)
            assert abs(b.total - (b.conf + b.cls + b.loc + b.giou)) <= 1e-12
            assert b.conf >= 0 and b.cls >= 0 and b.loc >= 0 and b.giou >= 0

    def test_single_weight_selects_component(self, single_target):
        cfg, target = single_target
        pred_values = perturbed(target.values, f0=0.4, f3=0.1, f5=0.2)
        pred = PredictionGrid(cfg, pred_values)
        b = total_loss(pred, target, LossWeights(1, 0, 0, 0))
        assert b.total == b.conf and b.cls == b.loc == b.giou == 0

    def test_zero_giou_weight_removes_component(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f3=0.5))
        b = total_loss(pred, target, LossWeights(1, 1, 1, 0))
        assert b.giou == 0.0
        assert b.total == pytest.approx(b.loc)

    def test_matches_naive_oracle(self):
        rng = random.Random(101)
        for _ in range(30):
            pred, target, weights = _random_instance(rng)
            expected = naive_total_loss(
                pred.values, target.values, target.cfg.grid_size, weights
            )
            assert total_loss(pred, target, weights).total == pytest.approx(
                expected, abs=1e-10
            )


class TestGradient:
    def test_zero_at_minimum_without_giou(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, target.values.copy())
        grad = grad_total(pred, target, LossWeights(1, 1, 1, 0))
        assert np.all(grad == 0)

    def test_conf_gradient_example(self, single_target):
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f0=0.5))
        grad = grad_total(pred, target, LossWeights(1, 0, 0, 0))
        assert grad[0, 0, 0, 0] == pytest.approx(-1.0)

    def test_matches_finite_differences(self):
        result = gradient_check(trials=30, seed=7)
        assert result.max_rel_error < 1e-5

    def test_fd_oracle_spot(self, single_target):
        # generic point: every pred corner strictly off its gt counterpart,
        # since analytic one-sided and central differences differ at ties
        cfg, target = single_target
        pred = PredictionGrid(
            cfg, perturbed(target.values, f0=0.7, f1=0.55, f2=0.43, f3=0.35, f4=0.27, f5=0.4)
        )
        weights = LossWeights(0.7, 1.3, 0.9, 1.1)
        analytic = grad_total(pred, target, weights)
        numeric = finite_difference_grad(pred, target, weights)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_tie_points_use_positive_side(self, single_target):
        # aligned y corners: the analytic derivative must equal the
        # forward-difference slope, not the central average
        cfg, target = single_target
        pred = PredictionGrid(cfg, perturbed(target.values, f3=0.35))
        weights = LossWeights(0, 0, 0, 1.0)
        analytic = grad_total(pred, target, weights)[0, 0, 0, 2]
        step = 1e-7
        up = total_loss(
            PredictionGrid(cfg, perturbed(target.values, f3=0.35, f2=0.5 + step)),
            target,
            weights,
        ).total
        base = total_loss(pred, target, weights).total
        forward = (up - base) / step
        assert analytic == pytest.approx(forward, abs=1e-5)


class TestToyFit:
    def test_converges_and_decodes(self):
        cfg = HeadConfig()
        objects = [(7, Box(0.5, 0.5, 0.3, 0.4))]
        grid, trace = toy_fit(objects, cfg, LossWeights(1, 1, 1, 0), lr=0.1, steps=2000)
        assert trace[-1].total < 1e-3
        dets = decode(grid, cfg, 0.5)
        assert len(dets) == 1
        assert dets[0].class_id == 7

    def test_monotone_on_quadratic(self):
        cfg = HeadConfig(grid_size=3, anchors_per_cell=2, num_classes=4,
                         anchors=((0.2, 0.2), (0.4, 0.4)))
        objects = [(1, Box(0.5, 0.5, 0.25, 0.25))]
        _, trace = toy_fit(objects, cfg, LossWeights(1, 1, 1, 0), lr=0.05, steps=200)
        totals = [b.total for b in trace]
        assert all(b <= a + 1e-15 for a, b in zip(totals, totals[1:]))

    def test_rejects_bad_arguments(self):
        cfg = tiny_cfg()
        objects = [(0, Box(0.5, 0.5, 0.2, 0.2))]
        with pytest.raises(ValueError):
            toy_fit(objects, cfg, LossWeights(), lr=0.1, steps=0)
        with pytest.raises(ValueError):
            toy_fit(objects, cfg, LossWeights(), lr=0.0, steps=10)

    def test_diverges_with_huge_lr(self):
        cfg = HeadConfig()
        objects = [(7, Box(0.5, 0.5, 0.3, 0.4))]
        with pytest.raises(Diverged):
            toy_fit(objects, cfg, LossWeights(1, 1, 1, 0), lr=1e3, steps=100)

    def test_collision_rejected(self):
        cfg = tiny_cfg(c=3)
        objects = [(0, Box(0.5, 0.5, 0.2, 0.2)), (1, Box(0.52, 0.52, 0.2, 0.2))]
        with pytest.raises(CollisionError):
            toy_fit(objects, cfg, LossWeights(), lr=0.01, steps=5)

    def test_initial_grid_deterministic(self):
        cfg = HeadConfig()
        a = initial_grid(cfg)
        b = initial_grid(cfg)
        assert np.array_equal(a.values, b.values)
        assert a.values[0, 0, 0, 0] == 0.5
        assert a.values[0, 0, 0, 5] == pytest.approx(1 / 36)
        # median of the default anchor widths
        assert a.values[0, 0, 0, 3] == pytest.approx(0.3)

    def test_trace_csv_layout(self):
        cfg = tiny_cfg()
        _, trace = toy_fit(
            [(0, Box(0.5, 0.5, 0.2, 0.2))], cfg, LossWeights(1, 0, 0, 0), lr=0.1, steps=3
        )
        csv = trace_to_csv(trace)
        lines = csv.splitlines()
        assert lines[0] == "step,conf,cls,loc,giou,total"
        assert len(lines) == 5  # header + steps 0..3
        assert lines[1].startswith("0,")
