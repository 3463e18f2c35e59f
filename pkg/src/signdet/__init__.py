"""signdet: hand-sign detection dataset tooling and detection math.

Box geometry (IoU/GIoU/NMS), YOLO TXT annotation with VOC/COCO converters,
netpbm imaging with quarter-turn augmentation, deterministic dataset
splitting, a single-scale grid head (encode/decode, shape and parameter
accounting), squared-error and box-overlap losses with analytic gradients,
and detection evaluation. Everything runs at desk scale with no trained
network.
"""

from .annotation import (
    DatasetManifest,
    LabelFile,
    LabelMap,
    ManifestEntry,
    build_manifest,
    load_manifest,
    parse_yolo,
    parse_yolo_line,
    save_manifest,
    serialize_yolo,
    to_coco,
    to_voc,
    validate_dataset,
)
from .dataset import AugmentSpec, SplitSpec, augment, split, stats
from .detector import (
    HeadConfig,
    LayerSpec,
    PredictionGrid,
    TargetGrid,
    assign_targets,
    decode,
    fit_anchors,
    param_count,
    shape_propagate,
)
from .errors import SignDetError
from .evaluate import (
    ConfusionMatrix,
    accuracy_top1,
    average_precision,
    confusion,
    evaluate_detections,
    match,
    precision_recall,
)
from .geometry import Box, Detection, area, enclosing, giou, iou, nms
from .imaging import (
    FramePolicy,
    Raster,
    read_image,
    resize,
    rotate_box,
    rotate_quarter,
    select_frames,
    to_grayscale,
    write_image,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    grad_total,
    gradient_check,
    loss_cls,
    loss_conf,
    loss_giou,
    loss_loc,
    total_loss,
    toy_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec",
    "Box",
    "ConfusionMatrix",
    "DatasetManifest",
    "Detection",
    "FramePolicy",
    "HeadConfig",
    "LabelFile",
    "LabelMap",
    "LayerSpec",
    "LossBreakdown",
    "LossWeights",
    "ManifestEntry",
    "PredictionGrid",
    "Raster",
    "SignDetError",
    "SplitSpec",
    "TargetGrid",
    "accuracy_top1",
    "area",
    "assign_targets",
    "augment",
    "average_precision",
    "build_manifest",
    "confusion",
    "decode",
    "enclosing",
    "evaluate_detections",
    "fit_anchors",
    "giou",
    "grad_total",
    "gradient_check",
    "iou",
    "load_manifest",
    "loss_cls",
    "loss_conf",
    "loss_giou",
    "loss_loc",
    "match",
    "nms",
    "param_count",
    "parse_yolo",
    "parse_yolo_line",
    "precision_recall",
    "read_image",
    "resize",
    "rotate_box",
    "rotate_quarter",
    "save_manifest",
    "select_frames",
    "serialize_yolo",
    "shape_propagate",
    "split",
    "stats",
    "to_coco",
    "to_grayscale",
    "to_voc",
    "total_loss",
    "toy_fit",
    "validate_dataset",
    "write_image",
]
