"""YOLO TXT annotations: parsing, validation, and conversion to VOC/COCO.

The on-disk contracts are bit-exact:

* YOLO TXT, one object per line: ``<class_id> <cx> <cy> <w> <h>``.
  Input is whitespace-tolerant; output uses single spaces, coordinates with
  exactly six decimal places, and a ``\\n`` terminator on every line.
* Label map, one class name per line, optionally ``name=alias``.
* Manifest, one entry per line: ``image_path<TAB>label_path<TAB>split``
  (split is ``train``/``val``/``test`` or ``-`` for unassigned). Relative
  paths are resolved against the manifest's directory.
* VOC XML with 1-based inclusive integer pixel corners,
  ``index = round_half_up(coord * dim) + 1`` clamped to ``[1, dim]``.
* COCO JSON with float pixel ``[x, y, w, h]`` bboxes, category ids
  ``1..C``, and dense annotation ids starting at 1.
"""

from __future__ import annotations

import json
import math
import os
import string
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .errors import BoxOutOfBounds, ClassOutOfRange, IoFailure, MalformedLine
from .geometry import Box

SPLITS = ("train", "val", "test")
IMAGE_EXTENSIONS = (".ppm", ".pgm")


class LabelMap:
    """Ordered class names fixing the id of every class.

    Names must be unique, non-empty, and whitespace-free. Optional aliases
    (e.g. Danish gesture names) resolve in name lookups but ids stay
    authoritative.
    """

    def __init__(self, names: list[str], aliases: dict[str, str] | None = None):
        if not names:
            raise ValueError("label map needs at least one class")
        seen = set()
        for name in names:
            if not name or any(c.isspace() for c in name):
                raise ValueError(f"bad class name {name!r}")
            if name in seen:
                raise ValueError(f"duplicate class name {name!r}")
            seen.add(name)
        self.names = list(names)
        self.aliases = dict(aliases or {})
        for alias, name in self.aliases.items():
            if name not in seen:
                raise ValueError(f"alias {alias!r} points at unknown class {name!r}")
        self._ids = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelMap)
            and self.names == other.names
            and self.aliases == other.aliases
        )

    def name(self, class_id: int) -> str:
        return self.names[class_id]

    def id(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        if name in self.aliases:
            return self._ids[self.aliases[name]]
        raise KeyError(f"unknown class name {name!r}")

    @classmethod
    def canonical(cls) -> "LabelMap":
        """The 36-class map: A..Z at ids 0..25, then 0..9 at ids 26..35."""
        return cls(list(string.ascii_uppercase) + [str(d) for d in range(10)])

    @classmethod
    def loads(cls, text: str) -> "LabelMap":
        names: list[str] = []
        aliases: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if "=" in line:
                name, alias = (part.strip() for part in line.split("=", 1))
                aliases[alias] = name
            else:
                name = line
            names.append(name)
        return cls(names, aliases)

    @classmethod
    def load(cls, path: str) -> "LabelMap":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise IoFailure(f"cannot read label map {path}: {exc}") from exc

    def dumps(self) -> str:
        alias_of = {name: alias for alias, name in self.aliases.items()}
        lines = []
        for name in self.names:
            if name in alias_of:
                lines.append(f"{name}={alias_of[name]}")
            else:
                lines.append(name)
        return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class LabelFile:
    """Parsed annotation for one image: (class_id, box) pairs."""

    image_id: str
    objects: tuple[tuple[int, Box], ...] = ()


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label_path: str
    split: str | None = None


@dataclass
class DatasetManifest:
    """Paired image/label paths with optional split assignment."""

    root: str = ""
    entries: list[ManifestEntry] = field(default_factory=list)

    def image_abspath(self, entry: ManifestEntry) -> str:
        return os.path.normpath(os.path.join(self.root, entry.image_path))

    def label_abspath(self, entry: ManifestEntry) -> str:
        return os.path.normpath(os.path.join(self.root, entry.label_path))


def _check_box_bounds(box: Box, line_no: int | None, token: str | None):
    x1, y1, x2, y2 = box.corners
    tol = 1e-9
    if x1 < -tol or y1 < -tol or x2 > 1 + tol or y2 > 1 + tol:
        raise BoxOutOfBounds(
            f"box edges ({x1:.6g}, {y1:.6g}, {x2:.6g}, {y2:.6g}) leave the unit image",
            line_no=line_no,
            token=token,
        )


def parse_yolo_line(line: str, label_map: LabelMap, line_no: int = 1) -> tuple[int, Box]:
    """Parse one YOLO TXT line into (class_id, Box), validating both."""
    stripped = line.strip()
    if not stripped:
        raise MalformedLine("empty annotation line", line_no=line_no)
    fields = stripped.split()
    if len(fields) != 5:
        raise MalformedLine(
            f"expected 5 fields, got {len(fields)}", line_no=line_no, token=stripped
        )
    try:
        class_id = int(fields[0])
    except ValueError:
        raise MalformedLine("class id is not an integer", line_no=line_no, token=fields[0]) from None
    values = []
    for tok in fields[1:]:
        try:
            v = float(tok)
        except ValueError:
            raise MalformedLine("coordinate is not a number", line_no=line_no, token=tok) from None
        if not math.isfinite(v):
            raise MalformedLine("coordinate is not finite", line_no=line_no, token=tok)
        values.append(v)
    if not (0 <= class_id < len(label_map)):
        raise ClassOutOfRange(
            f"class id {class_id} outside [0, {len(label_map)})",
            line_no=line_no,
            token=fields[0],
        )
    cx, cy, w, h = values
    if w <= 0 or h <= 0:
        raise BoxOutOfBounds(
            f"box sides must be positive, got w={w} h={h}", line_no=line_no, token=stripped
        )
    box = Box(cx, cy, w, h)
    _check_box_bounds(box, line_no, stripped)
    return class_id, box


def parse_yolo(text: str, label_map: LabelMap, image_id: str = "") -> LabelFile:
    """Parse a whole YOLO TXT document; blank lines are skipped."""
    objects = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        objects.append(parse_yolo_line(line, label_map, line_no=line_no))
    return LabelFile(image_id=image_id, objects=tuple(objects))


def serialize_yolo(label_file: LabelFile) -> str:
    """Render a LabelFile in canonical YOLO TXT form.

    One line per object, single spaces, six decimal places, a newline after
    every line, and no trailing blank line. Round-trips through
    :func:`parse_yolo` within 1e-6 per coordinate.
    """
    lines = []
    for class_id, box in label_file.objects:
        lines.append(f"{class_id} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f}\n")
    return "".join(lines)


def read_label_file(path: str, label_map: LabelMap) -> LabelFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read label file {path}: {exc}") from exc
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_yolo(text, label_map, image_id=stem)


def write_label_file(path: str, label_file: LabelFile):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(serialize_yolo(label_file))
    except OSError as exc:
        raise IoFailure(f"cannot write label file {path}: {exc}") from exc


# --- manifest I/O ---


def load_manifest(path: str, root: str | None = None) -> DatasetManifest:
    if root is None:
        root = os.path.dirname(os.path.abspath(path))
    entries = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(
                f"manifest line needs 3 tab-separated fields, got {len(parts)}",
                line_no=line_no,
                token=line,
            )
        image_path, label_path, split = parts
        if split == "-":
            split_val: str | None = None
        elif split in SPLITS:
            split_val = split
        else:
            raise MalformedLine("unknown split", line_no=line_no, token=split)
        entries.append(ManifestEntry(image_path, label_path, split_val))
    return DatasetManifest(root=root, entries=entries)


def save_manifest(manifest: DatasetManifest, path: str):
    """Write the manifest with paths relative to the output file's directory."""
    out_dir = os.path.dirname(os.path.abspath(path))
    lines = []
    for entry in manifest.entries:
        image_path = os.path.relpath(manifest.image_abspath(entry), out_dir)
        label_path = os.path.relpath(manifest.label_abspath(entry), out_dir)
        lines.append(f"{image_path}\t{label_path}\t{entry.split or '-'}\n")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("".join(lines))
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def build_manifest(
    images_dir: str, labels_dir: str, split: str | None = None
) -> tuple[DatasetManifest, list["Finding"]]:
    """Pair image and label files by stem; unpaired files become findings."""
    try:
        image_files = sorted(
            f for f in os.listdir(images_dir) if f.lower().endswith(IMAGE_EXTENSIONS)
        )
        label_files = sorted(f for f in os.listdir(labels_dir) if f.lower().endswith(".txt"))
    except OSError as exc:
        raise IoFailure(f"cannot scan dataset tree: {exc}") from exc
    labels_by_stem = {os.path.splitext(f)[0]: f for f in label_files}
    entries = []
    findings = []
    paired_stems = set()
    for image_file in image_files:
        stem = os.path.splitext(image_file)[0]
        label_file = labels_by_stem.get(stem)
        if label_file is None:
            findings.append(
                Finding(os.path.join(images_dir, image_file), "orphan-image", "no label file with matching stem")
            )
            continue
        paired_stems.add(stem)
        entries.append(
            ManifestEntry(
                os.path.join(images_dir, image_file),
                os.path.join(labels_dir, label_file),
                split,
            )
        )
    for stem, label_file in sorted(labels_by_stem.items()):
        if stem not in paired_stems:
            findings.append(
                Finding(os.path.join(labels_dir, label_file), "orphan-label", "no image file with matching stem")
            )
    return DatasetManifest(root="", entries=entries), findings


# --- validation ---


@dataclass(frozen=True)
class Finding:
    path: str
    kind: str
    message: str
    line_no: int | None = None

    def render(self) -> str:
        loc = f"{self.path}:{self.line_no}" if self.line_no is not None else self.path
        return f"{loc}: {self.kind}: {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding]
    object_counts: dict[int, int]
    image_counts: dict[int, int]
    split_counts: dict[str, int]
    images_checked: int = 0
    objects_total: int = 0

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "clean": self.clean,
            "images_checked": self.images_checked,
            "objects_total": self.objects_total,
            "findings": [
                {"path": f.path, "line": f.line_no, "kind": f.kind, "message": f.message}
                for f in self.findings
            ],
            "object_counts": {str(k): v for k, v in sorted(self.object_counts.items())},
            "image_counts": {str(k): v for k, v in sorted(self.image_counts.items())},
            "split_counts": {k: self.split_counts.get(k, 0) for k in SPLITS},
        }


def validate_dataset(
    manifest: DatasetManifest,
    label_map: LabelMap,
    extra_findings: list[Finding] | None = None,
) -> ValidationReport:
    """Check every manifest entry and every annotation line.

    Unreadable files are collected as findings, never raised, so one broken
    file does not hide the rest. The report is deterministically ordered by
    path regardless of manifest order or filesystem iteration.
    """
    findings: list[Finding] = list(extra_findings or [])
    object_counts: dict[int, int] = {}
    image_counts: dict[int, int] = {}
    split_counts: dict[str, int] = {}
    seen_images: set[str] = set()
    objects_total = 0

    for entry in manifest.entries:
        image_path = manifest.image_abspath(entry)
        label_path = manifest.label_abspath(entry)
        if entry.split is not None:
            split_counts[entry.split] = split_counts.get(entry.split, 0) + 1
        if image_path in seen_images:
            findings.append(Finding(image_path, "duplicate-entry", "image listed more than once"))
        seen_images.add(image_path)

        image_stem = os.path.splitext(os.path.basename(image_path))[0]
        label_stem = os.path.splitext(os.path.basename(label_path))[0]
        if image_stem != label_stem:
            findings.append(
                Finding(label_path, "stem-mismatch", f"label stem {label_stem!r} != image stem {image_stem!r}")
            )
        if not os.path.isfile(image_path):
            findings.append(Finding(image_path, "missing-image", "file does not exist"))
        if not os.path.isfile(label_path):
            findings.append(Finding(label_path, "missing-label", "file does not exist"))
            continue

        try:
            with open(label_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            findings.append(Finding(label_path, "io-failure", str(exc)))
            continue

        classes_here = set()
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                class_id, _box = parse_yolo_line(line, label_map, line_no=line_no)
            except (MalformedLine, ClassOutOfRange, BoxOutOfBounds) as exc:
                findings.append(Finding(label_path, type(exc).__name__, str(exc), line_no=line_no))
                continue
            object_counts[class_id] = object_counts.get(class_id, 0) + 1
            objects_total += 1
            classes_here.add(class_id)
        for class_id in classes_here:
            image_counts[class_id] = image_counts.get(class_id, 0) + 1

    findings.sort(key=lambda f: (f.path, f.line_no if f.line_no is not None else -1, f.kind))
    return ValidationReport(
        findings=findings,
        object_counts=object_counts,
        image_counts=image_counts,
        split_counts=split_counts,
        images_checked=len(manifest.entries),
        objects_total=objects_total,
    )


# --- VOC ---


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _voc_index(coord: float, dim: int) -> int:
    # 1-based inclusive pixel index; clamped so edge-touching boxes stay legal.
    return min(max(_round_half_up(coord * dim) + 1, 1), dim)


def box_to_voc(box: Box, image_size: tuple[int, int]) -> tuple[int, int, int, int]:
    """(xmin, ymin, xmax, ymax) integer pixel corners for one box."""
    width, height = image_size
    x1, y1, x2, y2 = box.corners
    return (
        _voc_index(x1, width),
        _voc_index(y1, height),
        _voc_index(x2, width),
        _voc_index(y2, height),
    )


def voc_to_box(
    xmin: int, ymin: int, xmax: int, ymax: int, image_size: tuple[int, int]
) -> Box:
    """Invert :func:`box_to_voc`; each corner is recovered within half a pixel."""
    width, height = image_size
    if xmax <= xmin or ymax <= ymin:
        raise BoxOutOfBounds(f"degenerate VOC box ({xmin}, {ymin}, {xmax}, {ymax})")
    return Box.from_corners(
        (xmin - 1) / width, (ymin - 1) / height, (xmax - 1) / width, (ymax - 1) / height
    )


def to_voc(
    label_file: LabelFile,
    image_size: tuple[int, int],
    label_map: LabelMap,
    depth: int = 1,
) -> str:
    """Render one image's annotation as a VOC XML document."""
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = label_file.image_id
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(width)
    ET.SubElement(size, "height").text = str(height)
    ET.SubElement(size, "depth").text = str(depth)
    for class_id, box in label_file.objects:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = label_map.name(class_id)
        bnd = ET.SubElement(obj, "bndbox")
        xmin, ymin, xmax, ymax = box_to_voc(box, image_size)
        ET.SubElement(bnd, "xmin").text = str(xmin)
        ET.SubElement(bnd, "ymin").text = str(ymin)
        ET.SubElement(bnd, "xmax").text = str(xmax)
        ET.SubElement(bnd, "ymax").text = str(ymax)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def parse_voc(xml_text: str, label_map: LabelMap) -> tuple[LabelFile, tuple[int, int]]:
    """Parse a VOC XML document back into a LabelFile and its image size."""
    root = ET.fromstring(xml_text)
    image_id = root.findtext("filename") or ""
    width = int(root.findtext("size/width"))
    height = int(root.findtext("size/height"))
    objects = []
    for obj in root.findall("object"):
        class_id = label_map.id(obj.findtext("name"))
        xmin = int(obj.findtext("bndbox/xmin"))
        ymin = int(obj.findtext("bndbox/ymin"))
        xmax = int(obj.findtext("bndbox/xmax"))
        ymax = int(obj.findtext("bndbox/ymax"))
        objects.append((class_id, voc_to_box(xmin, ymin, xmax, ymax, (width, height))))
    return LabelFile(image_id=image_id, objects=tuple(objects)), (width, height)


# --- COCO ---


def to_coco(
    manifest: DatasetManifest,
    label_map: LabelMap,
    image_size: tuple[int, int] | None = None,
) -> str:
    """Render a whole manifest as one COCO JSON document.

    Bboxes are float pixel [x, y, w, h]; category ids run 1..C; image and
    annotation ids are dense from 1 in manifest order. With image_size=None,
    each entry's dimensions are read from its image header, and unreadable
    images raise IoFailure. An empty manifest yields three empty arrays.
    """
    images = []
    annotations = []
    ann_id = 1
    for image_no, entry in enumerate(manifest.entries, start=1):
        image_path = manifest.image_abspath(entry)
        if image_size is not None:
            width, height = image_size
        else:
            from .imaging import read_image_file

            raster = read_image_file(image_path)
            width, height = raster.width, raster.height
        images.append(
            {
                "id": image_no,
                "file_name": os.path.basename(entry.image_path),
                "width": width,
                "height": height,
            }
        )
        label_file = read_label_file(manifest.label_abspath(entry), label_map)
        for class_id, box in label_file.objects:
            x1, y1, _x2, _y2 = box.corners
            bw = box.w * width
            bh = box.h * height
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_no,
                    "category_id": class_id + 1,
                    "bbox": [x1 * width, y1 * height, bw, bh],
                    "area": bw * bh,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    if manifest.entries:
        categories = [{"id": i + 1, "name": name} for i, name in enumerate(label_map.names)]
    else:
        categories = []
    doc = {"images": images, "annotations": annotations, "categories": categories}
    return json.dumps(doc, indent=2) + "\n"


def parse_coco(json_text: str) -> list[tuple[str, tuple[int, int], list[tuple[int, Box]]]]:
    """Parse COCO JSON back into per-image (file_name, size, objects) rows."""
    doc = json.loads(json_text)
    by_image: dict[int, list[tuple[int, Box]]] = {img["id"]: [] for img in doc["images"]}
    sizes = {img["id"]: (img["width"], img["height"]) for img in doc["images"]}
    for ann in doc["annotations"]:
        width, height = sizes[ann["image_id"]]
        x, y, bw, bh = ann["bbox"]
        box = Box.from_corners(x / width, y / height, (x + bw) / width, (y + bh) / height)
        by_image[ann["image_id"]].append((ann["category_id"] - 1, box))
    return [
        (img["file_name"], sizes[img["id"]], by_image[img["id"]])
        for img in doc["images"]
    ]


def with_split(entry: ManifestEntry, split: str | None) -> ManifestEntry:
    return replace(entry, split=split)
