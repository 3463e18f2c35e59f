"""Command-line interface: every pipeline stage as one subcommand.

Exit codes: 0 success, 1 validation findings or runtime failure, 2 usage
error (argparse prints the synopsis to stderr). All randomized behavior is
driven by --seed; repeated runs with the same arguments produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import annotation, dataset, detector, evaluate, imaging, losses
from .errors import SignDetError
from .geometry import nms as run_nms

DEGREES_TO_TURNS = {0: 0, 90: 1, 180: 2, 270: 3, 360: 0}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def _parse_ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = [float(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B:C, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative ratios, got {text!r}")
    total = sum(parts)
    return (parts[0] / total, parts[1] / total, parts[2] / total)


def _parse_turns(text: str) -> tuple[int, ...]:
    turns = []
    for part in text.split(","):
        try:
            degrees = int(part)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad angle {part!r}") from None
        if degrees not in DEGREES_TO_TURNS:
            raise argparse.ArgumentTypeError(f"angle must be one of 0/90/180/270/360, got {degrees}")
        turns.append(DEGREES_TO_TURNS[degrees])
    if not turns:
        raise argparse.ArgumentTypeError("at least one angle required")
    if len(set(turns)) != len(turns):
        raise argparse.ArgumentTypeError(f"duplicate angles in {text!r} (360 aliases 0)")
    return tuple(turns)


def _parse_weights(text: str) -> losses.LossWeights:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weights {text!r}") from None
    if len(parts) != 4 or any(p < 0 for p in parts):
        raise argparse.ArgumentTypeError("expected four non-negative weights conf,cls,loc,giou")
    return losses.LossWeights(conf=parts[0], cls=parts[1], loc=parts[2], giou=parts[3])


def _parse_anchors(text: str) -> tuple[tuple[float, float], ...]:
    anchors = []
    for part in text.split(","):
        try:
            w, h = (float(v) for v in part.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad anchor {part!r}, expected w:h") from None
        anchors.append((w, h))
    return tuple(anchors)


def _parse_frames(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad frame list {text!r}") from None


def _label_map(args) -> annotation.LabelMap:
    if getattr(args, "label_map", None):
        return annotation.LabelMap.load(args.label_map)
    return annotation.LabelMap.canonical()


def _input_manifest(args) -> tuple[annotation.DatasetManifest, list[annotation.Finding]]:
    if getattr(args, "manifest", None):
        return annotation.load_manifest(args.manifest), []
    if getattr(args, "images", None) and getattr(args, "labels_dir", None):
        return annotation.build_manifest(args.images, args.labels_dir)
    raise SignDetError("need --manifest or both --images and --labels")


def _head_config(args) -> detector.HeadConfig:
    if getattr(args, "head_config", None):
        return detector.load_head_config(args.head_config)
    anchors = args.anchors
    if anchors is None:
        anchors = detector.DEFAULT_ANCHORS
        if args.anchors_per_cell != len(anchors):
            raise SignDetError(
                f"--anchors-per-cell {args.anchors_per_cell} needs --anchors (defaults cover 4)"
            )
    return detector.HeadConfig(
        grid_size=args.grid_size,
        anchors_per_cell=args.anchors_per_cell,
        num_classes=args.classes,
        anchors=anchors,
    )


def _refuse_overwrite(force: bool, *paths: str) -> str | None:
    if force:
        return None
    for path in paths:
        if path and os.path.exists(path):
            return f"refusing to overwrite {path} (use --force)"
    return None


def _dir_nonempty(path: str) -> bool:
    return os.path.isdir(path) and bool(os.listdir(path))


def _write_text(path: str, text: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _say(args, text: str):
    if not args.quiet:
        print(text)


# --- subcommands ---


def cmd_validate(args) -> int:
    label_map = _label_map(args)
    manifest, findings = _input_manifest(args)
    report = annotation.validate_dataset(manifest, label_map, extra_findings=findings)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for finding in report.findings:
            print(finding.render(), file=sys.stderr)
        _say(args, f"images checked: {report.images_checked}")
        _say(args, f"objects: {report.objects_total}")
        _say(args, f"classes with objects: {len(report.object_counts)}")
        splits = ", ".join(f"{k}={v}" for k, v in sorted(report.split_counts.items())) or "none"
        _say(args, f"splits: {splits}")
        _say(args, "clean" if report.clean else f"findings: {len(report.findings)}")
    return 0 if report.clean else 1


def cmd_convert(args) -> int:
    label_map = _label_map(args)
    manifest, findings = _input_manifest(args)
    if findings:
        for finding in findings:
            print(finding.render(), file=sys.stderr)
        return 1
    if args.to == "coco":
        message = _refuse_overwrite(args.force, args.out)
        if message:
            print(message, file=sys.stderr)
            return 1
        _write_text(args.out, annotation.to_coco(manifest, label_map, image_size=args.image_size))
        _say(args, f"wrote {args.out}")
        return 0
    # voc: one XML per entry
    if not args.force and _dir_nonempty(args.out):
        print(f"refusing to write into non-empty {args.out} (use --force)", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    for entry in manifest.entries:
        label_file = annotation.read_label_file(manifest.label_abspath(entry), label_map)
        if args.image_size is not None:
            size = args.image_size
            depth = 1
        else:
            raster = imaging.read_image_file(manifest.image_abspath(entry))
            size = (raster.width, raster.height)
            depth = raster.channels
        xml = annotation.to_voc(label_file, size, label_map, depth=depth)
        _write_text(os.path.join(args.out, label_file.image_id + ".xml"), xml)
    _say(args, f"wrote {len(manifest.entries)} VOC files to {args.out}")
    return 0


def cmd_augment(args) -> int:
    label_map = _label_map(args)
    manifest, findings = _input_manifest(args)
    if not args.force and _dir_nonempty(args.out):
        print(f"refusing to write into non-empty {args.out} (use --force)", file=sys.stderr)
        return 1
    spec = dataset.AugmentSpec(
        turns=args.turns,
        resize_to=args.resize,
        grayscale=args.grayscale,
        keep_originals=not args.no_originals,
    )
    result = dataset.augment(manifest, spec, args.out, label_map)
    out_manifest = args.out_manifest or os.path.join(args.out, "manifest.tsv")
    annotation.save_manifest(result.manifest, out_manifest)
    all_findings = findings + result.findings
    for finding in all_findings:
        print(finding.render(), file=sys.stderr)
    _say(args, f"wrote {len(result.manifest.entries)} entries to {out_manifest}")
    return 0 if not all_findings else 1


def cmd_split(args) -> int:
    manifest = annotation.load_manifest(args.manifest)
    message = _refuse_overwrite(args.force, args.out)
    if message:
        print(message, file=sys.stderr)
        return 1
    spec = dataset.SplitSpec(ratios=args.ratios, seed=args.seed)
    result = dataset.split(manifest, spec, group_augmented=not args.flat)
    annotation.save_manifest(result, args.out)
    counts = {"train": 0, "val": 0, "test": 0}
    for entry in result.entries:
        counts[entry.split] += 1
    _say(args, f"train={counts['train']} val={counts['val']} test={counts['test']}")
    _say(args, f"wrote {args.out}")
    return 0


def cmd_stats(args) -> int:
    label_map = _label_map(args)
    manifest, findings = _input_manifest(args)
    report = dataset.stats(manifest, label_map)
    report.findings = findings + report.findings
    message = _refuse_overwrite(args.force, args.out, args.plot)
    if message:
        print(message, file=sys.stderr)
        return 1
    if args.out:
        _write_text(args.out, json.dumps(report.to_dict(), indent=2) + "\n")
    if args.plot:
        from . import plots

        plots.plot_class_counts(report, args.plot)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        _say(args, f"images: {report.total_images}  objects: {report.total_objects}")
        _say(args, f"classes: {len(report.classes)}")
        for row in report.classes:
            _say(args, f"  {row.class_id:>3} {row.name:<8} images={row.images:<5} objects={row.objects}")
        splits = ", ".join(f"{k}={v}" for k, v in sorted(report.split_counts.items())) or "none"
        _say(args, f"splits: {splits}")
        sizes = ", ".join(f"{k}: {v}" for k, v in sorted(report.size_counts.items())) or "none"
        _say(args, f"sizes: {sizes}")
    for finding in report.findings:
        print(finding.render(), file=sys.stderr)
    return 0 if not report.findings else 1


def cmd_select_frames(args) -> int:
    if args.frames is not None:
        policy = imaging.FramePolicy.explicit(args.frames)
    else:
        policy = imaging.FramePolicy(start=args.start, step=args.step, count=args.count)
    indices = imaging.select_frames(args.total, policy)
    if args.json:
        print(json.dumps(indices))
    else:
        for idx in indices:
            print(idx)
    return 0


def cmd_encode(args) -> int:
    label_map = _label_map(args)
    cfg = _head_config(args)
    label_file = annotation.read_label_file(args.labels, label_map)
    if len(label_map) != cfg.num_classes:
        raise SignDetError(
            f"label map has {len(label_map)} classes but head expects {cfg.num_classes}"
        )
    message = _refuse_overwrite(args.force, args.out)
    if message:
        print(message, file=sys.stderr)
        return 1
    grid = detector.assign_targets(list(label_file.objects), cfg)
    detector.save_grid(grid, args.out)
    for collision in grid.collisions:
        print(
            f"collision at cell ({collision.col}, {collision.row}) anchor {collision.anchor}: "
            f"object {collision.dropped_object} dropped",
            file=sys.stderr,
        )
    _say(args, f"wrote {args.out}")
    return 0 if not grid.collisions else 1


def cmd_decode(args) -> int:
    grid = detector.load_grid(args.grid)
    pred = detector.PredictionGrid(grid.cfg, grid.values)
    dets = detector.decode(pred, grid.cfg, args.conf)
    text = evaluate.serialize_predictions(dets)
    if args.out:
        message = _refuse_overwrite(args.force, args.out)
        if message:
            print(message, file=sys.stderr)
            return 1
        _write_text(args.out, text)
        _say(args, f"wrote {len(dets)} detections to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _grids_for_loss(args) -> tuple[detector.PredictionGrid, detector.TargetGrid]:
    pred = detector.load_grid(args.pred)
    target = detector.load_grid(args.target)
    if not isinstance(target, detector.TargetGrid):
        raise SignDetError(f"{args.target} is not a target grid")
    return detector.PredictionGrid(pred.cfg, pred.values), target


def cmd_loss(args) -> int:
    pred, target = _grids_for_loss(args)
    breakdown = losses.total_loss(pred, target, args.weights)
    if args.json:
        print(
            json.dumps(
                {
                    "conf": breakdown.conf,
                    "cls": breakdown.cls,
                    "loc": breakdown.loc,
                    "giou": breakdown.giou,
                    "total": breakdown.total,
                }
            )
        )
    else:
        print(f"conf  {breakdown.conf!r}")
        print(f"cls   {breakdown.cls!r}")
        print(f"loc   {breakdown.loc!r}")
        print(f"giou  {breakdown.giou!r}")
        print(f"total {breakdown.total!r}")
    return 0


def cmd_gradcheck(args) -> int:
    result = losses.gradient_check(trials=args.trials, seed=args.seed, step=args.step_size)
    if args.json:
        print(
            json.dumps(
                {
                    "trials": result.trials,
                    "max_rel_error": result.max_rel_error,
                    "passed": result.passed,
                }
            )
        )
    else:
        print(f"max relative error over {result.trials} trials: {result.max_rel_error:.3e}")
    return 0 if result.passed else 1


def cmd_toy_train(args) -> int:
    label_map = _label_map(args)
    cfg = _head_config(args)
    label_file = annotation.read_label_file(args.labels, label_map)
    message = _refuse_overwrite(args.force, args.trace, args.plot, args.out)
    if message:
        print(message, file=sys.stderr)
        return 1
    grid, trace = losses.toy_fit(
        list(label_file.objects), cfg, args.weights, lr=args.lr, steps=args.steps
    )
    _say(args, f"final loss after {args.steps} steps: {trace[-1].total:.6e}")
    if args.trace:
        _write_text(args.trace, losses.trace_to_csv(trace))
    if args.plot:
        from . import plots

        plots.plot_loss_trace(trace, args.plot)
    if args.out:
        detector.save_grid(grid, args.out)
    return 0


def cmd_nms(args) -> int:
    cfg_classes = args.classes
    dets = evaluate.read_predictions(args.dets, cfg_classes)
    kept = run_nms(dets, args.iou, class_aware=not args.class_agnostic)
    text = evaluate.serialize_predictions(kept)
    if args.out:
        message = _refuse_overwrite(args.force, args.out)
        if message:
            print(message, file=sys.stderr)
            return 1
        _write_text(args.out, text)
        _say(args, f"kept {len(kept)} of {len(dets)} detections")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    label_map = _label_map(args)
    num_classes = len(label_map)
    try:
        gt_files = sorted(f for f in os.listdir(args.gt) if f.endswith(".txt"))
    except OSError as exc:
        raise SignDetError(f"cannot scan {args.gt}: {exc}") from exc
    dets_per_image = []
    gts_per_image = []
    skipped = []
    for gt_file in gt_files:
        label_file = annotation.read_label_file(os.path.join(args.gt, gt_file), label_map)
        pred_path = os.path.join(args.pred, gt_file)
        if os.path.isfile(pred_path):
            dets = evaluate.read_predictions(pred_path, num_classes)
        else:
            dets = []
            skipped.append(f"no predictions for {gt_file}")
        gts_per_image.append(list(label_file.objects))
        dets_per_image.append(dets)
    report = evaluate.evaluate_detections(
        dets_per_image,
        gts_per_image,
        num_classes,
        iou_threshold=args.iou,
        conf_threshold=args.conf,
    )
    report.skipped = skipped
    message = _refuse_overwrite(args.force, args.report, args.plot)
    if message:
        print(message, file=sys.stderr)
        return 1
    if args.report:
        _write_text(args.report, evaluate.report_to_json(report))
    if args.plot:
        from . import plots

        plots.plot_confusion(report.confusion, label_map.names, args.plot)
    if args.json:
        print(evaluate.report_to_json(report), end="")
    else:
        sys.stdout.write(report.to_table())
    for note in skipped:
        print(note, file=sys.stderr)
    return 0


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--label-map", help="label map file (default: canonical A-Z,0-9)")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomized behavior")
    common.add_argument("--quiet", action="store_true", help="suppress informational output")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    manifest_in = argparse.ArgumentParser(add_help=False)
    manifest_in.add_argument("--manifest", help="dataset manifest (TSV)")
    manifest_in.add_argument("--images", help="images directory (alternative to --manifest)")
    manifest_in.add_argument("--labels", dest="labels_dir", help="labels directory (with --images)")

    head = argparse.ArgumentParser(add_help=False)
    head.add_argument("--head-config", help="JSON head config file")
    head.add_argument("--grid-size", type=int, default=13)
    head.add_argument("--anchors-per-cell", type=int, default=4)
    head.add_argument("--classes", type=int, default=36)
    head.add_argument("--anchors", type=_parse_anchors, default=None, help="w:h,w:h,...")

    parser = argparse.ArgumentParser(
        prog="signdet",
        description="Hand-sign detection dataset and detection-math toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", parents=[common, manifest_in], help="check annotations and pairing")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("convert", parents=[common, manifest_in], help="convert annotations to VOC or COCO")
    p.add_argument("--to", choices=("voc", "coco"), required=True)
    p.add_argument("--out", required=True, help="output directory (voc) or file (coco)")
    p.add_argument("--image-size", type=_parse_size, default=None, help="WxH (default: read image headers)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("augment", parents=[common, manifest_in], help="write rotated dataset variants")
    p.add_argument("--turns", type=_parse_turns, default=(1, 2, 3, 0), help="angles, e.g. 90,180,270,0")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--out-manifest", help="output manifest path (default <out>/manifest.tsv)")
    p.add_argument("--grayscale", action="store_true")
    p.add_argument("--resize", type=_parse_size, default=None, help="WxH applied after rotation")
    p.add_argument("--no-originals", action="store_true", help="exclude source entries from the manifest")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", parents=[common], help="assign train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.1, 0.1), help="e.g. 80:10:10")
    p.add_argument("--out", required=True)
    p.add_argument("--flat", action="store_true", help="ignore _r<deg> grouping (may leak rotations)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", parents=[common, manifest_in], help="dataset statistics")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--plot", help="render a per-class bar chart PNG")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("select-frames", parents=[common], help="apply the frame-keeping policy")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--frames", type=_parse_frames, default=None, help="explicit indices, e.g. 50,60")
    p.add_argument("--start", type=int, default=50)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--count", type=int, default=6)
    p.set_defaults(func=cmd_select_frames)

    p = sub.add_parser("encode", parents=[common, head], help="labels to target grid")
    p.add_argument("--labels", required=True, help="YOLO TXT label file")
    p.add_argument("--out", required=True, help="grid JSON output")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="grid to detections")
    p.add_argument("--grid", required=True)
    p.add_argument("--conf", type=float, default=0.5)
    p.add_argument("--out", help="write detections here (default stdout)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("loss", parents=[common], help="loss breakdown of saved grids")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--weights", type=_parse_weights, default=losses.LossWeights())
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs numeric gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--step-size", type=float, default=1e-5, help="finite-difference step")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toy-train", parents=[common, head], help="gradient descent on one label file")
    p.add_argument("--labels", required=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--weights", type=_parse_weights, default=losses.LossWeights(giou=0.0))
    p.add_argument("--trace", help="write the loss trace CSV here")
    p.add_argument("--plot", help="render the loss curves PNG here")
    p.add_argument("--out", help="write the fitted grid here")
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("nms", parents=[common], help="suppress overlapping detections")
    p.add_argument("--dets", required=True, help="prediction file")
    p.add_argument("--iou", type=float, default=0.45)
    p.add_argument("--classes", type=int, default=36)
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--out", help="write survivors here (default stdout)")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", parents=[common], help="metrics report from GT and prediction dirs")
    p.add_argument("--gt", required=True, help="directory of YOLO TXT ground truth")
    p.add_argument("--pred", required=True, help="directory of 6-field prediction files")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--plot", help="render the confusion heatmap PNG here")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SignDetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
