from __future__ import annotations

import json
import logging

import numpy as np
import pytest
from PIL import Image

import helpers
from leafcollage import dataset_io, leafbank, synth
from leafcollage.errors import IngestionError, InvalidInputError, PreparationError
from leafcollage.metrics import ImageMetrics, MetricsReport


# ------------------------------------------------------------ raster codecs


def test_rgb_round_trip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(37, 53, 3), dtype=np.uint8)
    path = tmp_path / "img_rgb.png"
    dataset_io.save_rgb(path, pixels)
    assert np.array_equal(dataset_io.load_rgb(path), pixels)


def test_labels_round_trip_many_instances(tmp_path):
    # A scene with 300 instances does not fit in 8 bits.
    labels = np.arange(20 * 20, dtype=np.uint16).reshape(20, 20) % 301
    path = tmp_path / "img_label.png"
    dataset_io.save_labels(path, labels)
    with Image.open(path) as img:
        assert img.mode == "I;16"
    back = dataset_io.load_labels(path)
    assert back.dtype == np.uint16
    assert np.array_equal(back, labels)
    assert back.max() == 300


def test_labels_accepts_eight_bit(tmp_path):
    labels = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    path = tmp_path / "small_label.png"
    Image.fromarray(labels, mode="L").save(path)
    back = dataset_io.load_labels(path)
    assert back.dtype == np.uint16
    assert np.array_equal(back, labels)


def test_labels_rejects_multichannel(tmp_path):
    path = tmp_path / "bad_label.png"
    dataset_io.save_rgb(path, np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(IngestionError):
        dataset_io.load_labels(path)


def test_labels_rejects_out_of_range(tmp_path):
    path = tmp_path / "big_label.tiff"
    Image.fromarray(np.full((4, 4), 70000, dtype=np.int32), mode="I").save(path)
    with pytest.raises(IngestionError):
        dataset_io.load_labels(path)


def test_labels_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        dataset_io.load_labels(tmp_path / "absent.png")


def test_fg_is_binary_255(tmp_path):
    labels = np.array([[0, 2], [5, 0]], dtype=np.uint16)
    path = tmp_path / "img_fg.png"
    dataset_io.save_fg(path, labels > 0)
    with Image.open(path) as img:
        assert img.mode == "L"
        back = np.asarray(img)
    assert np.array_equal(back, np.array([[0, 255], [255, 0]], dtype=np.uint8))


def test_rgba_round_trip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(9, 11, 4), dtype=np.uint8)
    path = tmp_path / "leaf.png"
    dataset_io.save_rgba(path, pixels)
    assert np.array_equal(dataset_io.load_rgba(path), pixels)


# -------------------------------------------------------------------- CSVs


def test_csv_lf_endings_and_header(tmp_path):
    path = tmp_path / "t.csv"
    dataset_io.write_csv(path, "a,b", ["1,2", "3,4"])
    raw = path.read_bytes()
    assert raw == b"a,b\n1,2\n3,4\n"
    assert b"\r" not in raw
    assert dataset_io.read_csv(path, "a,b") == [["1", "2"], ["3", "4"]]


def test_csv_header_enforced(tmp_path):
    path = tmp_path / "t.csv"
    dataset_io.write_csv(path, "a,b", ["1,2"])
    with pytest.raises(IngestionError):
        dataset_io.read_csv(path, "x,y")
    empty = tmp_path / "empty.csv"
    empty.write_bytes(b"")
    with pytest.raises(IngestionError):
        dataset_io.read_csv(empty, "a,b")


# -------------------------------------------------------- source discovery


def _write_pair(src, stem, size=(16, 16), n_labels=2):
    rgb = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    labels = np.zeros((size[1], size[0]), dtype=np.uint16)
    for k in range(n_labels):
        labels[2 + 3 * k, 2] = k + 1
    dataset_io.save_rgb(src / f"{stem}_rgb.png", rgb)
    dataset_io.save_labels(src / f"{stem}_label.png", labels)


def test_discover_sources_pairs_and_centers(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    _write_pair(src, "a")
    _write_pair(src, "b")
    (src / "centers.csv").write_text("source_id,x,y\na,7.5,8.0\n")
    records = dataset_io.discover_sources(src, subset_tag="A1")
    assert [r.source_id for r in records] == ["a", "b"]
    assert records[0].plant_center == (7.5, 8.0)
    assert records[1].plant_center is None
    assert all(r.subset_tag == "A1" for r in records)


def test_discover_sources_unpaired_is_error(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    _write_pair(src, "a")
    dataset_io.save_rgb(src / "b_rgb.png", np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(IngestionError, match="unpaired"):
        dataset_io.discover_sources(src)


def test_discover_sources_unknown_center_is_error(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    _write_pair(src, "a")
    (src / "centers.csv").write_text("source_id,x,y\nghost,1.0,2.0\n")
    with pytest.raises(IngestionError, match="ghost"):
        dataset_io.discover_sources(src)


def test_discover_sources_empty_or_missing(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(IngestionError):
        dataset_io.discover_sources(empty)
    with pytest.raises(IngestionError):
        dataset_io.discover_sources(tmp_path / "absent")


def test_load_annotated_dimension_mismatch(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    dataset_io.save_rgb(src / "a_rgb.png", np.zeros((8, 8, 3), dtype=np.uint8))
    dataset_io.save_labels(src / "a_label.png", np.zeros((8, 9), dtype=np.uint16))
    rec = dataset_io.discover_sources(src)[0]
    with pytest.raises(IngestionError):
        dataset_io.load_annotated(rec)


def test_load_annotated_zero_labels_warns(tmp_path, caplog):
    src = tmp_path / "src"
    src.mkdir()
    dataset_io.save_rgb(src / "a_rgb.png", np.zeros((8, 8, 3), dtype=np.uint8))
    dataset_io.save_labels(src / "a_label.png", np.zeros((8, 8), dtype=np.uint16))
    rec = dataset_io.discover_sources(src)[0]
    with caplog.at_level(logging.WARNING, logger="leafcollage.dataset_io"):
        img = dataset_io.load_annotated(rec)
    assert "no instances" in caplog.text
    assert img.label_values() == []


# ------------------------------------------------------------- backgrounds


def test_prepare_backgrounds_center_crop():
    params = synth.PRESETS["A3"]
    raw = np.arange(2448 * 2048 * 3, dtype=np.int64).reshape(2048, 2448, 3) % 256
    raw = raw.astype(np.uint8)
    bgs = dataset_io.prepare_backgrounds([raw], params)
    assert bgs.ids == ["bg000"]
    assert bgs.images[0].shape == (2048, 2048, 3)
    assert np.array_equal(bgs.images[0], raw[:, 200:2248])


def test_prepare_backgrounds_random_crop_in_bounds():
    params = synth.NaiveParams(canvas_w=32, canvas_h=16, leaves_min=0, leaves_max=0)
    raw = np.zeros((64, 64, 3), dtype=np.uint8)
    raw[10:26, 5:37] = 200
    rng = np.random.default_rng(5)
    for _ in range(10):
        bgs = dataset_io.prepare_backgrounds([raw], params, mode="random", rng=rng)
        assert bgs.images[0].shape == (16, 32, 3)
    with pytest.raises(InvalidInputError):
        dataset_io.prepare_backgrounds([raw], params, mode="random", rng=None)
    with pytest.raises(InvalidInputError):
        dataset_io.prepare_backgrounds([raw], params, mode="diagonal")


def test_prepare_backgrounds_too_small():
    params = synth.PRESETS["A1"]
    raw = np.zeros((300, 700, 3), dtype=np.uint8)
    with pytest.raises(PreparationError):
        dataset_io.prepare_backgrounds([raw], params)
    resized = dataset_io.prepare_backgrounds([raw], params, allow_resize=True)
    assert resized.images[0].shape == (512, 512, 3)


def test_background_set_length_mismatch():
    with pytest.raises(InvalidInputError):
        dataset_io.BackgroundSet(subset_tag="custom", ids=["a"], images=[])


def test_load_backgrounds_sorted_and_cropped(tmp_path):
    bg_dir = tmp_path / "bg"
    bg_dir.mkdir()
    for name in ("zz", "aa"):
        dataset_io.save_rgb(bg_dir / f"{name}.png", helpers.random_background((80, 70)))
    params = synth.NaiveParams(canvas_w=64, canvas_h=64, leaves_min=0, leaves_max=0)
    bgs = dataset_io.load_backgrounds(bg_dir, params)
    assert bgs.ids == ["aa", "zz"]
    assert all(img.shape == (64, 64, 3) for img in bgs.images)
    with pytest.raises(IngestionError):
        dataset_io.load_backgrounds(tmp_path / "none", params)


# -------------------------------------------------------------- leaf banks


@pytest.fixture()
def small_bank():
    rgb, labels, center = helpers.build_source(n_leaves=4, seed=12)
    img = leafbank.AnnotatedImage(
        pixels=rgb, labels=labels, plant_center=center, source_id="s0"
    )
    bank, _ = leafbank.build_bank([img], kind="aligned")
    return bank


def test_bank_round_trip(tmp_path, small_bank):
    bank_dir = tmp_path / "bank"
    index = dataset_io.save_bank(small_bank, bank_dir)
    assert index.name == "index.csv"
    header = index.read_text().splitlines()[0]
    assert header == "id,source_id,label,subset_tag,anchor_x,anchor_y,area_px,aligned"
    loaded = dataset_io.load_bank(bank_dir)
    assert loaded.kind == "aligned"
    assert len(loaded) == len(small_bank)
    for orig, back in zip(small_bank.cutouts, loaded.cutouts):
        assert back.id == orig.id
        assert back.anchor == orig.anchor
        assert back.aligned is True
        assert back.area_px == orig.area_px
        assert np.array_equal(back.pixels, orig.pixels)


def test_bank_kind_inferred_from_flags(tmp_path):
    rgb, labels, center = helpers.build_source(n_leaves=3, seed=13, size=(260, 260),
                                               base_offset=14.0, length_range=(60.0, 76.0),
                                               half_width_range=(8.0, 11.0))
    img = leafbank.AnnotatedImage(pixels=rgb, labels=labels, plant_center=center, source_id="s1")
    bank, _ = leafbank.build_bank([img], kind="prescaled", prescale_longest_dim=100)
    bank_dir = tmp_path / "bank"
    dataset_io.save_bank(bank, bank_dir)
    assert dataset_io.load_bank(bank_dir).kind == "prescaled"


def test_bank_duplicate_ids_rejected(tmp_path, small_bank):
    doubled = leafbank.LeafBank(
        cutouts=small_bank.cutouts + small_bank.cutouts[:1], kind="aligned"
    )
    with pytest.raises(InvalidInputError):
        dataset_io.save_bank(doubled, tmp_path / "bank")


def test_bank_area_verified_on_load(tmp_path, small_bank):
    bank_dir = tmp_path / "bank"
    index = dataset_io.save_bank(small_bank, bank_dir)
    lines = index.read_text().splitlines()
    parts = lines[1].split(",")
    parts[6] = str(int(parts[6]) + 1)
    lines[1] = ",".join(parts)
    index.write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError):
        dataset_io.load_bank(bank_dir)


def test_bank_empty_index_rejected(tmp_path):
    bank_dir = tmp_path / "bank"
    bank_dir.mkdir()
    dataset_io.write_csv(bank_dir / "index.csv", dataset_io.BANK_INDEX_HEADER, [])
    with pytest.raises(IngestionError):
        dataset_io.load_bank(bank_dir)


# ------------------------------------------------------- scenes and reports


def test_manifest_json_is_canonical():
    manifest = synth.SceneManifest(
        image_id="00003",
        global_seed=9,
        image_index=3,
        kind="naive",
        background_id="bg001",
        plant_center=None,
        placements=[],
        placed_count=0,
        visible_count=0,
        min_visible=50,
    )
    raw = dataset_io.manifest_to_json(manifest)
    text = raw.decode("utf-8")
    assert text.endswith("\n")
    keys = [line.split('"')[1] for line in text.splitlines() if line.startswith('  "')]
    assert keys == sorted(keys)
    rebuilt = synth.SceneManifest.from_dict(json.loads(raw))
    assert rebuilt == manifest


def test_write_scene_files(tmp_path, small_bank, background):
    from leafcollage.raster import Placement, Scene, composite_leaf

    scene = Scene.from_background(background)
    cut = small_bank.cutouts[0]
    composite_leaf(
        scene, cut, Placement(leaf_id=cut.id, position=(100.0, 80.0), angle_deg=0.0, z=1)
    )
    manifest = synth.SceneManifest(
        image_id="00000",
        global_seed=1,
        image_index=0,
        kind="structured",
        background_id="bg",
        plant_center=(100.0, 80.0),
        placements=[
            synth.Placement(leaf_id=cut.id, position=(100.0, 80.0), angle_deg=0.0, z=1)
        ],
        placed_count=1,
        visible_count=1,
        min_visible=0,
    )
    paths = dataset_io.write_scene(scene, manifest, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "00000_fg.png",
        "00000_label.png",
        "00000_manifest.json",
        "00000_rgb.png",
    ]
    assert np.array_equal(dataset_io.load_rgb(paths["rgb"]), scene.pixels)
    assert np.array_equal(dataset_io.load_labels(paths["label"]), scene.labels)
    with Image.open(paths["fg"]) as img:
        fg = np.asarray(img)
    assert np.array_equal(fg > 0, scene.labels > 0)
    assert dataset_io.discover_label_ids(tmp_path) == {"00000"}


def test_counts_csv_format(tmp_path):
    path = tmp_path / "counts.csv"
    dataset_io.write_counts_csv(path, [("00000", 12), ("00001", 7)])
    assert path.read_text() == "image_id,count\n00000,12\n00001,7\n"


def test_metrics_csvs(tmp_path):
    report = MetricsReport(
        records=[
            ImageMetrics("00000", 1.0, 1.0, 1.0, 1.0, 0, 0),
            ImageMetrics("00001", 0.5, 0.5, 0.5, 0.75, -2, 2),
        ],
        missing_pred=[],
        missing_gt=[],
    )
    per_image, aggregate = dataset_io.write_metrics_csvs(report, tmp_path)
    lines = per_image.read_text().splitlines()
    assert lines[0] == "image_id,best_dice,fgbg_dice,diff_fg,abs_diff_fg"
    assert lines[1] == "00000,1.0,1.0,0,0"
    assert lines[2] == "00001,0.5,0.75,-2,2"
    agg_lines = aggregate.read_text().splitlines()
    assert agg_lines[0] == "best_dice,fgbg_dice,diff_fg,abs_diff_fg"
    assert agg_lines[1] == "0.75,0.875,-1.0,1.0"


def test_run_metadata_sorted(tmp_path):
    path = dataset_io.write_run_metadata(tmp_path, {"zeta": 3, "alpha": "x", "mid": 1.5})
    assert path.read_text() == "alpha = x\nmid = 1.5\nzeta = 3\n"
