"""Dataset assembly: quarter-turn augmentation, seeded splits, statistics.

Splitting is reproducible by construction. Every split unit (a source
image's bare stem by default, the full image path in flat mode) gets a
64-bit sort key ``splitmix64(fnv1a64(unit) XOR splitmix64(seed))``; units
are ordered by (key, unit) and cut at floor(n * r_train) and
floor(n * (r_train + r_val)). The key depends only on the unit string and
the seed, so the assignment survives manifest reordering.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from .annotation import (
    DatasetManifest,
    Finding,
    LabelFile,
    LabelMap,
    ManifestEntry,
    read_label_file,
    with_split,
    write_label_file,
)
from .errors import DegenerateSplit, SignDetError
from .imaging import read_image_file, resize, rotate_box, rotate_quarter, to_grayscale, write_image_file

_MASK64 = (1 << 64) - 1
_AUG_SUFFIX = re.compile(r"_r(?:0|90|180|270)$")


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = (h ^ byte) * 0x100000001B3 & _MASK64
    return h


def _shuffle_key(path: str, seed: int) -> int:
    return _splitmix64(_fnv1a64(path.encode("utf-8")) ^ _splitmix64(seed & _MASK64))


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test ratios plus the shuffle seed."""

    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError(f"ratios must be three non-negative reals, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios}")


@dataclass(frozen=True)
class AugmentSpec:
    """Quarter turns to apply, with optional grayscale/resize postprocessing."""

    turns: tuple[int, ...] = (1, 2, 3, 0)
    resize_to: tuple[int, int] | None = None
    grayscale: bool = False
    keep_originals: bool = True
    allow_duplicate_turns: bool = False

    def __post_init__(self):
        if not self.turns:
            raise ValueError("turns must be non-empty")
        if any(t not in (0, 1, 2, 3) for t in self.turns):
            raise ValueError(f"turns must be drawn from 0..3, got {self.turns}")
        if not self.allow_duplicate_turns and len(set(self.turns)) != len(self.turns):
            raise ValueError(f"duplicate turns {self.turns}")


@dataclass
class AugmentResult:
    manifest: DatasetManifest
    findings: list[Finding] = field(default_factory=list)


def augment(
    manifest: DatasetManifest,
    spec: AugmentSpec,
    out_dir: str,
    label_map: LabelMap | None = None,
) -> AugmentResult:
    """Write rotated copies of every image/label pair under out_dir.

    Output names follow ``<stem>_r<degrees>`` so provenance stays visible
    (turn 0 is an honest ``_r0`` duplicate). Grayscale and resize run after
    rotation. Per-file failures become findings; the entry is then skipped.
    The result manifest lists each original followed by its variants, with
    the source entry's split inherited.
    """
    label_map = label_map or LabelMap.canonical()
    images_out = os.path.join(out_dir, "images")
    labels_out = os.path.join(out_dir, "labels")
    os.makedirs(images_out, exist_ok=True)
    os.makedirs(labels_out, exist_ok=True)

    entries: list[ManifestEntry] = []
    findings: list[Finding] = []
    for entry in manifest.entries:
        image_path = manifest.image_abspath(entry)
        try:
            raster = read_image_file(image_path)
            label_file = read_label_file(manifest.label_abspath(entry), label_map)
        except SignDetError as exc:
            findings.append(Finding(image_path, type(exc).__name__, str(exc)))
            continue
        if spec.keep_originals:
            entries.append(entry)
        stem = os.path.splitext(os.path.basename(image_path))[0]
        for turn in spec.turns:
            out_raster = rotate_quarter(raster, turn)
            if spec.grayscale:
                out_raster = to_grayscale(out_raster)
            if spec.resize_to is not None:
                out_raster = resize(out_raster, spec.resize_to[0], spec.resize_to[1])
            ext = ".pgm" if out_raster.channels == 1 else ".ppm"
            name = f"{stem}_r{90 * turn}"
            out_image = os.path.join(images_out, name + ext)
            out_label = os.path.join(labels_out, name + ".txt")
            objects = tuple(
                (class_id, rotate_box(box, turn)) for class_id, box in label_file.objects
            )
            try:
                write_image_file(out_image, out_raster)
                write_label_file(out_label, LabelFile(image_id=name, objects=objects))
            except SignDetError as exc:
                findings.append(Finding(out_image, type(exc).__name__, str(exc)))
                continue
            # Absolute paths: out_dir is cwd-relative, the manifest root may
            # not be, and join(root, absolute) resolves correctly either way.
            entries.append(
                ManifestEntry(os.path.abspath(out_image), os.path.abspath(out_label), entry.split)
            )
    return AugmentResult(DatasetManifest(root=manifest.root, entries=entries), findings)


def _group_key(entry: ManifestEntry) -> str:
    # Augmented variants share their source's key so they follow its split.
    # Keyed on the bare stem: augmented copies live in a different directory
    # than their sources, and stems are unique dataset-wide by construction
    # (augment writes every variant into one flat images directory).
    stem = os.path.splitext(os.path.basename(entry.image_path))[0]
    return _AUG_SUFFIX.sub("", stem)


def split(manifest: DatasetManifest, spec: SplitSpec, group_augmented: bool = True) -> DatasetManifest:
    """Assign every entry to train/val/test, deterministically from the seed.

    With group_augmented (the default), ``_r<degrees>`` variants follow their
    source image's assignment so rotated duplicates cannot leak across
    splits; pass False for flat entry-wise splitting. Counts use the floor
    rule, so each split differs from its exact ratio share by at most 1.
    """
    if len(manifest.entries) < 3:
        raise ValueError(f"manifest needs at least 3 entries to split, got {len(manifest.entries)}")
    if group_augmented:
        keys = sorted({_group_key(entry) for entry in manifest.entries})
    else:
        keys = [entry.image_path for entry in manifest.entries]
    ordered = sorted(keys, key=lambda k: (_shuffle_key(k, spec.seed), k))
    n = len(ordered)
    r_train, r_val, _r_test = spec.ratios
    cut1 = int(n * r_train)
    cut2 = int(n * (r_train + r_val))
    sizes = (cut1, cut2 - cut1, n - cut2)
    for size, ratio, name in zip(sizes, spec.ratios, ("train", "val", "test")):
        if size == 0 and ratio > 0:
            raise DegenerateSplit(f"{name} split would be empty (n={n}, ratio={ratio})")
    assignment: dict[str, str] = {}
    for pos, key in enumerate(ordered):
        if pos < cut1:
            assignment[key] = "train"
        elif pos < cut2:
            assignment[key] = "val"
        else:
            assignment[key] = "test"
    entries = []
    for entry in manifest.entries:
        key = _group_key(entry) if group_augmented else entry.image_path
        entries.append(with_split(entry, assignment[key]))
    return DatasetManifest(root=manifest.root, entries=entries)


@dataclass
class ClassStats:
    class_id: int
    name: str
    images: int
    objects: int


@dataclass
class StatsReport:
    classes: list[ClassStats]
    split_counts: dict[str, int]
    size_counts: dict[str, int]
    total_images: int
    total_objects: int
    findings: list[Finding] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_images": self.total_images,
            "total_objects": self.total_objects,
            "classes": [
                {"id": c.class_id, "name": c.name, "images": c.images, "objects": c.objects}
                for c in self.classes
            ],
            "split_counts": dict(sorted(self.split_counts.items())),
            "size_counts": dict(sorted(self.size_counts.items())),
            "findings": [f.render() for f in self.findings],
        }


def stats(manifest: DatasetManifest, label_map: LabelMap) -> StatsReport:
    """Per-class, per-split, and image-size tallies for a manifest.

    Emits one row per label-map class (zeros included) and is invariant
    under manifest reordering. Unreadable files become findings rather than
    aborting the pass.
    """
    image_counts = {i: 0 for i in range(len(label_map))}
    object_counts = {i: 0 for i in range(len(label_map))}
    split_counts: dict[str, int] = {}
    size_counts: dict[str, int] = {}
    findings: list[Finding] = []
    total_objects = 0
    for entry in sorted(manifest.entries, key=lambda e: e.image_path):
        if entry.split is not None:
            split_counts[entry.split] = split_counts.get(entry.split, 0) + 1
        image_path = manifest.image_abspath(entry)
        try:
            raster = read_image_file(image_path)
            size_key = f"{raster.width}x{raster.height}"
        except SignDetError as exc:
            findings.append(Finding(image_path, type(exc).__name__, str(exc)))
            size_key = "unreadable"
        size_counts[size_key] = size_counts.get(size_key, 0) + 1
        try:
            label_file = read_label_file(manifest.label_abspath(entry), label_map)
        except SignDetError as exc:
            findings.append(Finding(manifest.label_abspath(entry), type(exc).__name__, str(exc)))
            continue
        classes_here = set()
        for class_id, _box in label_file.objects:
            object_counts[class_id] += 1
            total_objects += 1
            classes_here.add(class_id)
        for class_id in classes_here:
            image_counts[class_id] += 1
    classes = [
        ClassStats(i, label_map.name(i), image_counts[i], object_counts[i])
        for i in range(len(label_map))
    ]
    findings.sort(key=lambda f: (f.path, f.kind))
    return StatsReport(
        classes=classes,
        split_counts=split_counts,
        size_counts=size_counts,
        total_images=len(manifest.entries),
        total_objects=total_objects,
        findings=findings,
    )
