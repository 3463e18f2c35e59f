import os
import random
from collections import Counter

import pytest

from helpers import rotated_box_oracle, write_dataset_tree
from signdet.annotation import (
    DatasetManifest,
    LabelMap,
    ManifestEntry,
    build_manifest,
    load_manifest,
    parse_yolo,
    save_manifest,
    validate_dataset,
)
from signdet.dataset import AugmentSpec, SplitSpec, augment, split, stats
from signdet.errors import DegenerateSplit
from signdet.imaging import read_image_file


@pytest.fixture
def label_map():
    return LabelMap.canonical()


def entries_for(n):
    return [
        ManifestEntry(f"images/img{i:03d}.ppm", f"labels/img{i:03d}.txt") for i in range(n)
    ]


class TestSplit:
    def test_floor_rule_252(self):
        manifest = DatasetManifest(entries=entries_for(252))
        out = split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=7))
        counts = Counter(e.split for e in out.entries)
        assert counts == {"train": 201, "val": 25, "test": 26}

    def test_deterministic_and_seed_sensitive(self):
        manifest = DatasetManifest(entries=entries_for(40))
        a = split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=3))
        b = split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=3))
        c = split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=4))
        assert [e.split for e in a.entries] == [e.split for e in b.entries]
        assert [e.split for e in a.entries] != [e.split for e in c.entries]

    def test_partition_property(self):
        rng = random.Random(50)
        for _ in range(20):
            n = rng.randint(10, 120)
            r1 = rng.uniform(0.3, 0.8)
            r2 = rng.uniform(0.05, (1 - r1) / 2)
            ratios = (r1, r2, 1 - r1 - r2)
            manifest = DatasetManifest(entries=entries_for(n))
            try:
                out = split(manifest, SplitSpec(ratios, seed=rng.randrange(1 << 60)))
            except DegenerateSplit:
                continue
            assert len(out.entries) == n
            assert {e.image_path for e in out.entries} == {
                e.image_path for e in manifest.entries
            }
            counts = Counter(e.split for e in out.entries)
            for count, ratio in zip(
                (counts["train"], counts["val"], counts["test"]), ratios
            ):
                assert abs(count - n * ratio) <= 1

    def test_all_train(self):
        manifest = DatasetManifest(entries=entries_for(5))
        out = split(manifest, SplitSpec((1.0, 0.0, 0.0), seed=1))
        assert all(e.split == "train" for e in out.entries)

    def test_degenerate(self):
        manifest = DatasetManifest(entries=entries_for(3))
        with pytest.raises(DegenerateSplit):
            split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=1))

    def test_too_few_entries(self):
        manifest = DatasetManifest(entries=entries_for(2))
        with pytest.raises(ValueError):
            split(manifest, SplitSpec((1.0, 0.0, 0.0), seed=1))

    def test_order_independent(self):
        manifest = DatasetManifest(entries=entries_for(30))
        reordered = DatasetManifest(entries=list(reversed(manifest.entries)))
        a = split(manifest, SplitSpec((0.8, 0.1, 0.1), seed=9))
        b = split(reordered, SplitSpec((0.8, 0.1, 0.1), seed=9))
        by_path_a = {e.image_path: e.split for e in a.entries}
        by_path_b = {e.image_path: e.split for e in b.entries}
        assert by_path_a == by_path_b

    def test_augmented_follow_source(self):
        entries = []
        for i in range(12):
            entries.append(ManifestEntry(f"img{i}.ppm", f"img{i}.txt"))
            for deg in (90, 180, 270, 0):
                entries.append(ManifestEntry(f"img{i}_r{deg}.ppm", f"img{i}_r{deg}.txt"))
        manifest = DatasetManifest(entries=entries)
        out = split(manifest, SplitSpec((0.5, 0.25, 0.25), seed=2))
        by_stem = {}
        for e in out.entries:
            base = e.image_path.split("_r")[0].split(".")[0]
            by_stem.setdefault(base, set()).add(e.split)
        assert all(len(v) == 1 for v in by_stem.values())

    def test_augmented_follow_source_across_directories(self, tmp_path, label_map):
        # the real layout: originals under src/, variants under the augment
        # output directory; rotations must not leak across splits
        write_dataset_tree(str(tmp_path / "src"), num_classes=4, per_class=3)
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        result = augment(manifest, AugmentSpec(turns=(1, 2, 3, 0)), str(tmp_path / "aug"))
        out = split(result.manifest, SplitSpec((0.5, 0.25, 0.25), seed=2))
        by_source = {}
        for e in out.entries:
            stem = os.path.splitext(os.path.basename(e.image_path))[0]
            base = stem.rsplit("_r", 1)[0] if "_r" in stem else stem
            by_source.setdefault(base, set()).add(e.split)
        assert len(by_source) == 12
        assert all(len(v) == 1 for v in by_source.values())

    def test_flat_mode_ignores_grouping(self):
        entries = []
        for i in range(8):
            entries.append(ManifestEntry(f"img{i}.ppm", f"img{i}.txt"))
            entries.append(ManifestEntry(f"img{i}_r90.ppm", f"img{i}_r90.txt"))
        manifest = DatasetManifest(entries=entries)
        out = split(manifest, SplitSpec((0.5, 0.25, 0.25), seed=11), group_augmented=False)
        counts = Counter(e.split for e in out.entries)
        assert counts == {"train": 8, "val": 4, "test": 4}


class TestSplitSpec:
    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SplitSpec((0.8, 0.1, 0.2), seed=0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec((1.1, -0.1, 0.0), seed=0)


class TestAugment:
    def test_thirty_per_class(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path / "src"), num_classes=2, per_class=6)
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        result = augment(manifest, AugmentSpec(turns=(1, 2, 3, 0)), str(tmp_path / "out"))
        assert not result.findings
        # 6 originals + 24 rotated variants per class
        assert len(result.manifest.entries) == 2 * 30
        per_class = Counter()
        for entry in result.manifest.entries:
            text = open(result.manifest.label_abspath(entry)).read()
            objs = parse_yolo(text, label_map).objects
            assert len(objs) == 1
            per_class[objs[0][0]] += 1
        assert per_class == {0: 30, 1: 30}

    def test_turn_zero_is_pixel_identical_copy(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path / "src"), num_classes=1, per_class=1)
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        result = augment(
            manifest, AugmentSpec(turns=(0,), keep_originals=False), str(tmp_path / "out")
        )
        assert len(result.manifest.entries) == 1
        entry = result.manifest.entries[0]
        assert entry.image_path.endswith("_r0.pgm")
        original = read_image_file(manifest.image_abspath(manifest.entries[0]))
        copy = read_image_file(result.manifest.image_abspath(entry))
        assert copy == original

    def test_labels_validate_and_match_oracle(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path / "src"), num_classes=3, per_class=2, image_size=(64, 64))
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        result = augment(manifest, AugmentSpec(turns=(1, 2, 3)), str(tmp_path / "out"))
        report = validate_dataset(result.manifest, label_map)
        assert report.clean
        # every augmented box agrees with the rasterize-rotate-rebox oracle
        sources = {}
        for entry in manifest.entries:
            stem = os.path.splitext(os.path.basename(entry.image_path))[0]
            text = open(manifest.label_abspath(entry)).read()
            sources[stem] = parse_yolo(text, label_map).objects[0][1]
        for entry in result.manifest.entries:
            stem = os.path.splitext(os.path.basename(entry.image_path))[0]
            if "_r" not in stem:
                continue
            base, degrees = stem.rsplit("_r", 1)
            turns = {"0": 0, "90": 1, "180": 2, "270": 3}[degrees]
            text = open(result.manifest.label_abspath(entry)).read()
            box = parse_yolo(text, label_map).objects[0][1]
            oracle = rotated_box_oracle(sources[base], turns, n=64)
            for got, want in zip(box.corners, oracle):
                assert abs(got - want) <= 1 / 64 + 1e-6

    def test_grayscale_and_resize(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path / "src"), num_classes=1, per_class=1, channels=3)
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        spec = AugmentSpec(turns=(1,), grayscale=True, resize_to=(16, 16), keep_originals=False)
        result = augment(manifest, spec, str(tmp_path / "out"))
        raster = read_image_file(result.manifest.image_abspath(result.manifest.entries[0]))
        assert (raster.width, raster.height, raster.channels) == (16, 16, 1)
        assert result.manifest.entries[0].image_path.endswith(".pgm")

    def test_unreadable_file_collected(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path / "src"), num_classes=1, per_class=2)
        bad = tmp_path / "src" / "images" / "c00_0.pgm"
        bad.write_bytes(b"P5\n4 4\n255\n")  # truncated
        manifest, _ = build_manifest(
            str(tmp_path / "src" / "images"), str(tmp_path / "src" / "labels")
        )
        result = augment(manifest, AugmentSpec(turns=(1,)), str(tmp_path / "out"))
        assert len(result.findings) == 1
        assert result.findings[0].kind == "TruncatedData"
        stems = {os.path.basename(e.image_path) for e in result.manifest.entries}
        assert "c00_0_r90.pgm" not in stems

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AugmentSpec(turns=())
        with pytest.raises(ValueError):
            AugmentSpec(turns=(1, 1))
        with pytest.raises(ValueError):
            AugmentSpec(turns=(4,))
        AugmentSpec(turns=(1, 1), allow_duplicate_turns=True)


class TestStats:
    def test_empty_manifest(self, label_map):
        report = stats(DatasetManifest(), label_map)
        assert report.total_images == 0
        assert report.total_objects == 0
        assert len(report.classes) == 36
        assert all(c.objects == 0 for c in report.classes)

    def test_counts_and_rows(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path), num_classes=36, per_class=2, image_size=(8, 8))
        manifest, _ = build_manifest(str(tmp_path / "images"), str(tmp_path / "labels"))
        report = stats(manifest, label_map)
        assert len(report.classes) == 36
        assert report.total_images == 72
        assert all(c.images == 2 and c.objects == 2 for c in report.classes)
        assert report.size_counts == {"8x8": 72}

    def test_split_rows(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path), num_classes=4, per_class=3)
        manifest, _ = build_manifest(str(tmp_path / "images"), str(tmp_path / "labels"))
        assigned = split(manifest, SplitSpec((0.5, 0.25, 0.25), seed=1))
        report = stats(assigned, label_map)
        assert report.split_counts == {"train": 6, "val": 3, "test": 3}

    def test_reorder_invariant(self, tmp_path, label_map):
        write_dataset_tree(str(tmp_path), num_classes=3, per_class=2)
        manifest, _ = build_manifest(str(tmp_path / "images"), str(tmp_path / "labels"))
        reordered = DatasetManifest(root=manifest.root, entries=list(reversed(manifest.entries)))
        assert stats(manifest, label_map).to_dict() == stats(reordered, label_map).to_dict()


def test_manifest_relativized_round_trip(tmp_path, label_map):
    write_dataset_tree(str(tmp_path / "data"), num_classes=2, per_class=2)
    manifest, _ = build_manifest(
        str(tmp_path / "data" / "images"), str(tmp_path / "data" / "labels")
    )
    path = tmp_path / "elsewhere" / "manifest.tsv"
    os.makedirs(path.parent)
    save_manifest(manifest, str(path))
    loaded = load_manifest(str(path))
    assert validate_dataset(loaded, label_map).clean
