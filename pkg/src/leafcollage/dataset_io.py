"""Persistence layer: PNG raster codecs, source discovery, background
preparation, leaf-bank and scene serialization, and CSV reports.

All CSVs are comma-separated UTF-8 with a mandatory header row and LF line
endings. Label images are written as 16-bit single-channel PNG so scenes
can exceed 255 instances; 8-bit label inputs are accepted.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError, InvalidInputError, PreparationError
from .leafbank import LeafBank, LeafCutout, AnnotatedImage

logger = logging.getLogger(__name__)

BANK_INDEX_HEADER = "id,source_id,label,subset_tag,anchor_x,anchor_y,area_px,aligned"
COUNTS_HEADER = "image_id,count"
METRICS_HEADER = "image_id,best_dice,fgbg_dice,diff_fg,abs_diff_fg"


# ------------------------------------------------------------ raster codecs


def load_rgb(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read RGB image {path}: {exc}") from exc


def load_labels(path: str | Path) -> np.ndarray:
    """Read an instance label image as a uint16 raster.

    Accepts 8-bit grayscale/palette and 16/32-bit integer PNGs; rejects
    multi-channel images, whose channel semantics would be ambiguous.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("RGB", "RGBA", "CMYK", "YCbCr"):
                raise IngestionError(
                    f"label image {path} is multi-channel ({img.mode}); expected single channel"
                )
            arr = np.asarray(img)
    except IngestionError:
        raise
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read label image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise IngestionError(f"label image {path} has shape {arr.shape}; expected 2-D")
    if arr.dtype != np.uint16:
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max):
            raise IngestionError(f"label values in {path} exceed the 16-bit range")
        arr = arr.astype(np.uint16)
    return arr


def load_rgba(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGBA"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read RGBA image {path}: {exc}") from exc


def save_rgb(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    # uint16 input makes Pillow pick the 16-bit single-channel mode.
    data = np.ascontiguousarray(labels, dtype=np.uint16)
    Image.fromarray(data).save(path)


def save_fg(path: str | Path, foreground: np.ndarray) -> None:
    data = (np.asarray(foreground, dtype=bool) * np.uint8(255))
    Image.fromarray(data, mode="L").save(path)


def save_rgba(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGBA").save(path)


# --------------------------------------------------------- CSV primitives


def write_csv(path: str | Path, header: str, rows: list[str]) -> None:
    """Write a CSV with LF endings and UTF-8 encoding, header mandatory."""
    text = "\n".join([header, *rows]) + "\n"
    Path(path).write_bytes(text.encode("utf-8"))


def read_csv(path: str | Path, expected_header: str) -> list[list[str]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read CSV {path}: {exc}") from exc
    if not lines or lines[0] != expected_header:
        raise IngestionError(
            f"{path}: expected header {expected_header!r}, found {lines[0] if lines else 'empty file'!r}"
        )
    return [line.split(",") for line in lines[1:] if line]


def _format_float(value: float) -> str:
    # repr round-trips exactly; integral floats render as e.g. "17.0".
    return repr(float(value))


# -------------------------------------------------------- source discovery


@dataclass
class SourceRecord:
    source_id: str
    rgb_path: Path
    label_path: Path
    plant_center: tuple[float, float] | None = None
    subset_tag: str = "custom"


def discover_sources(src_dir: str | Path, subset_tag: str = "custom") -> list[SourceRecord]:
    """Pair ``{stem}_rgb.png`` with ``{stem}_label.png`` under one directory.

    An optional ``centers.csv`` sidecar (header ``source_id,x,y``) attaches
    marked plant centers. An RGB image without its label mate (or vice
    versa) is an error, not a skip.
    """
    src_dir = Path(src_dir)
    if not src_dir.is_dir():
        raise IngestionError(f"source directory {src_dir} does not exist")
    rgbs = {p.name[: -len("_rgb.png")]: p for p in sorted(src_dir.glob("*_rgb.png"))}
    labels = {p.name[: -len("_label.png")]: p for p in sorted(src_dir.glob("*_label.png"))}
    unmatched = sorted(set(rgbs) ^ set(labels))
    if unmatched:
        raise IngestionError(
            f"{src_dir}: unpaired source stems {unmatched}; need both _rgb.png and _label.png"
        )
    if not rgbs:
        raise IngestionError(f"{src_dir}: no *_rgb.png sources found")
    centers: dict[str, tuple[float, float]] = {}
    sidecar = src_dir / "centers.csv"
    if sidecar.exists():
        for row in read_csv(sidecar, "source_id,x,y"):
            if len(row) != 3:
                raise IngestionError(f"{sidecar}: malformed row {','.join(row)!r}")
            centers[row[0]] = (float(row[1]), float(row[2]))
        unknown = sorted(set(centers) - set(rgbs))
        if unknown:
            raise IngestionError(f"{sidecar}: centers for unknown sources {unknown}")
    return [
        SourceRecord(
            source_id=stem,
            rgb_path=rgbs[stem],
            label_path=labels[stem],
            plant_center=centers.get(stem),
            subset_tag=subset_tag,
        )
        for stem in sorted(rgbs)
    ]


def load_annotated(rec: SourceRecord) -> AnnotatedImage:
    """Load one source pair, enforcing equal dimensions.

    An all-zero label raster is allowed but logged, since it contributes
    nothing to a bank.
    """
    pixels = load_rgb(rec.rgb_path)
    labels = load_labels(rec.label_path)
    if pixels.shape[:2] != labels.shape:
        raise IngestionError(
            f"{rec.rgb_path} is {pixels.shape[1]}x{pixels.shape[0]} but "
            f"{rec.label_path} is {labels.shape[1]}x{labels.shape[0]}"
        )
    if not labels.any():
        logger.warning("%s: label image has no instances", rec.label_path)
    return AnnotatedImage(
        pixels=pixels,
        labels=labels,
        plant_center=rec.plant_center,
        source_id=rec.source_id,
        subset_tag=rec.subset_tag,
    )


# ------------------------------------------------------------- backgrounds


@dataclass
class BackgroundSet:
    subset_tag: str
    ids: list[str]
    images: list[np.ndarray]

    def __post_init__(self):
        if len(self.ids) != len(self.images):
            raise InvalidInputError("background ids and images differ in length")

    def __len__(self) -> int:
        return len(self.images)


def _target_size(params) -> tuple[int, int]:
    if hasattr(params, "train_w"):
        return int(params.train_w), int(params.train_h)
    if hasattr(params, "canvas_w"):
        return int(params.canvas_w), int(params.canvas_h)
    raise InvalidInputError(f"{type(params).__name__} carries no canvas dimensions")


def _crop_to(image: np.ndarray, w: int, h: int, mode: str, rng, allow_resize: bool, name: str):
    ih, iw = image.shape[:2]
    if iw < w or ih < h:
        if not allow_resize:
            raise PreparationError(
                f"background {name} is {iw}x{ih}, smaller than canvas {w}x{h} (resize disabled)"
            )
        s = max(w / iw, h / ih)
        resized = Image.fromarray(image, mode="RGB").resize(
            (int(math.ceil(iw * s)), int(math.ceil(ih * s))), Image.BILINEAR
        )
        image = np.asarray(resized, dtype=np.uint8)
        ih, iw = image.shape[:2]
    if mode == "center":
        x0 = (iw - w) // 2
        y0 = (ih - h) // 2
    elif mode == "random":
        if rng is None:
            raise InvalidInputError("random crop mode requires a random stream")
        x0 = int(rng.integers(0, iw - w + 1))
        y0 = int(rng.integers(0, ih - h + 1))
    else:
        raise InvalidInputError(f"unknown crop mode {mode!r}")
    return image[y0 : y0 + h, x0 : x0 + w]


def prepare_backgrounds(
    images: list[np.ndarray],
    params,
    subset_tag: str = "custom",
    ids: list[str] | None = None,
    mode: str = "center",
    rng=None,
    allow_resize: bool = False,
) -> BackgroundSet:
    """Crop raw background images to the canvas size of ``params``.

    ``params`` may be any object exposing train_w/train_h or
    canvas_w/canvas_h. Images already at canvas size pass through unchanged.
    """
    w, h = _target_size(params)
    if ids is None:
        ids = [f"bg{i:03d}" for i in range(len(images))]
    out = [
        _crop_to(np.asarray(img, dtype=np.uint8), w, h, mode, rng, allow_resize, ids[i])
        for i, img in enumerate(images)
    ]
    return BackgroundSet(subset_tag=subset_tag, ids=list(ids), images=out)


def load_backgrounds(
    bg_dir: str | Path,
    params,
    subset_tag: str = "custom",
    mode: str = "center",
    rng=None,
    allow_resize: bool = False,
) -> BackgroundSet:
    """Load every PNG/JPEG under a directory and crop to canvas size."""
    bg_dir = Path(bg_dir)
    paths = sorted(
        p for p in bg_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    ) if bg_dir.is_dir() else []
    if not paths:
        raise IngestionError(f"no background images found in {bg_dir}")
    images = [load_rgb(p) for p in paths]
    ids = [p.stem for p in paths]
    return prepare_backgrounds(
        images, params, subset_tag=subset_tag, ids=ids, mode=mode, rng=rng, allow_resize=allow_resize
    )


# ------------------------------------------------------------- bank on disk


def save_bank(bank: LeafBank, out_dir: str | Path) -> Path:
    """Persist a bank as one RGBA PNG per cutout plus ``index.csv``.

    Returns the index path. Cutout ids must be unique within a bank.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = [c.id for c in bank.cutouts]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("bank contains duplicate cutout ids")
    rows = []
    for c in bank.cutouts:
        save_rgba(out_dir / f"{c.id}.png", c.pixels)
        rows.append(
            ",".join(
                [
                    c.id,
                    c.source_id,
                    str(c.label),
                    c.subset_tag,
                    _format_float(c.anchor[0]),
                    _format_float(c.anchor[1]),
                    str(c.area_px),
                    "true" if c.aligned else "false",
                ]
            )
        )
    index = out_dir / "index.csv"
    write_csv(index, BANK_INDEX_HEADER, rows)
    return index


def load_bank(bank_dir: str | Path) -> LeafBank:
    """Reload a persisted bank; the kind is inferred from the aligned flags."""
    bank_dir = Path(bank_dir)
    cutouts: list[LeafCutout] = []
    for row in read_csv(bank_dir / "index.csv", BANK_INDEX_HEADER):
        if len(row) != 8:
            raise IngestionError(f"{bank_dir / 'index.csv'}: malformed row {','.join(row)!r}")
        cid, source_id, label, subset_tag, ax, ay, area_px, aligned = row
        pixels = load_rgba(bank_dir / f"{cid}.png")
        cutout = LeafCutout(
            pixels=pixels,
            anchor=(float(ax), float(ay)),
            source_id=source_id,
            label=int(label),
            aligned=aligned == "true",
            subset_tag=subset_tag,
            origin=None,
        )
        if cutout.area_px != int(area_px):
            raise IngestionError(
                f"{bank_dir / f'{cid}.png'}: area {cutout.area_px} != indexed {area_px}"
            )
        cutouts.append(cutout)
    if not cutouts:
        raise IngestionError(f"{bank_dir}: bank index is empty")
    kind = "aligned" if all(c.aligned for c in cutouts) else "prescaled"
    return LeafBank(cutouts=cutouts, kind=kind)


# ----------------------------------------------------------- scene output


def manifest_to_json(manifest) -> bytes:
    """Canonical manifest bytes: sorted keys, 2-space indent, trailing LF."""
    d = dataclasses.asdict(manifest)
    return (json.dumps(d, sort_keys=True, indent=2) + "\n").encode("utf-8")


def load_manifest_dict(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}") from exc


def scene_paths(out_dir: str | Path, image_id: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "rgb": out_dir / f"{image_id}_rgb.png",
        "label": out_dir / f"{image_id}_label.png",
        "fg": out_dir / f"{image_id}_fg.png",
        "manifest": out_dir / f"{image_id}_manifest.json",
    }


def write_scene(scene, manifest, out_dir: str | Path) -> dict[str, Path]:
    """Write the four per-scene files; returns their paths by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = scene_paths(out_dir, manifest.image_id)
    try:
        save_rgb(paths["rgb"], scene.pixels)
        save_labels(paths["label"], scene.labels)
        save_fg(paths["fg"], scene.labels > 0)
        paths["manifest"].write_bytes(manifest_to_json(manifest))
    except OSError as exc:
        raise IngestionError(f"cannot write scene files under {out_dir}: {exc}") from exc
    return paths


def write_counts_csv(path: str | Path, rows: list[tuple[str, int]]) -> None:
    write_csv(path, COUNTS_HEADER, [f"{image_id},{count}" for image_id, count in rows])


def discover_label_ids(tree: str | Path) -> set[str]:
    tree = Path(tree)
    if not tree.is_dir():
        raise IngestionError(f"label directory {tree} does not exist")
    return {p.name[: -len("_label.png")] for p in tree.glob("*_label.png")}


# --------------------------------------------------------- metrics reports


def write_metrics_csvs(report, out_dir: str | Path) -> tuple[Path, Path]:
    """Emit per-image and one-row aggregate CSVs; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_image = out_dir / "metrics_per_image.csv"
    rows = [
        ",".join(
            [
                r.image_id,
                _format_float(r.best_dice),
                _format_float(r.fgbg_dice),
                str(r.diff_fg),
                str(r.abs_diff_fg),
            ]
        )
        for r in report.records
    ]
    write_csv(per_image, METRICS_HEADER, rows)
    agg = report.aggregates()
    aggregate = out_dir / "metrics_aggregate.csv"
    write_csv(
        aggregate,
        "best_dice,fgbg_dice,diff_fg,abs_diff_fg",
        [
            ",".join(
                _format_float(agg[k]) for k in ("best_dice", "fgbg_dice", "diff_fg", "abs_diff_fg")
            )
        ],
    )
    return per_image, aggregate


def write_run_metadata(out_dir: str | Path, resolved: dict) -> Path:
    """Echo every resolved option as ``key = value`` lines, sorted by key."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_metadata.txt"
    lines = [f"{k} = {resolved[k]}" for k in sorted(resolved)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
