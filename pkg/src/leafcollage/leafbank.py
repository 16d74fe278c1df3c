"""Leaf bank construction: extract per-leaf cutouts from annotated images,
filter out unusable ones, and normalize survivors for the two generators
(canonical alignment for structured placement, fixed-size prescale for
random placement).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import raster
from .errors import (
    ConfigurationError,
    DegenerateMaskError,
    EmptyExtractionError,
    InvalidInputError,
)

SUBSET_TAGS = ("A1", "A2", "A3", "A4", "custom")

FILTER_REASONS = ("multi_component", "too_small", "base_far_from_center", "occluded")

_BOX_3X3 = np.ones((3, 3), dtype=bool)
_CROSS_3X3 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class AnnotatedImage:
    """Source image with instance labels and an optional marked plant center."""

    pixels: np.ndarray
    labels: np.ndarray
    plant_center: tuple[float, float] | None = None
    source_id: str = "source"
    subset_tag: str = "custom"

    def __post_init__(self):
        if self.pixels.shape[:2] != self.labels.shape:
            raise InvalidInputError(
                f"{self.source_id}: labels {self.labels.shape} do not match "
                f"pixels {self.pixels.shape[:2]}"
            )
        if self.subset_tag not in SUBSET_TAGS:
            raise InvalidInputError(f"unknown subset_tag {self.subset_tag!r}")

    def center(self) -> tuple[float, float]:
        """Marked plant center, or the foreground centroid when unmarked."""
        if self.plant_center is not None:
            return (float(self.plant_center[0]), float(self.plant_center[1]))
        ys, xs = np.nonzero(self.labels)
        if xs.size == 0:
            raise EmptyExtractionError(f"{self.source_id}: no labeled pixels")
        return (float(xs.mean()), float(ys.mean()))

    def label_values(self) -> list[int]:
        values = np.unique(self.labels)
        return [int(v) for v in values if v != 0]


@dataclass
class LeafCutout:
    """One extracted leaf: a tight RGBA raster plus its handling metadata.

    ``anchor`` is the coordinate used for placement. Freshly extracted leaves
    anchor at the base pixel (nearest alpha pixel to the plant center);
    aligned leaves anchor at the bottom-center pixel; prescaled leaves anchor
    at the alpha centroid. ``origin`` records the raster's offset within the
    source image so extraction can be inverted.
    """

    pixels: np.ndarray
    anchor: tuple[float, float]
    source_id: str
    label: int
    aligned: bool = False
    subset_tag: str = "custom"
    origin: tuple[int, int] | None = None

    @property
    def id(self) -> str:
        return f"{self.source_id}_{self.label}"

    @property
    def area_px(self) -> int:
        return int((self.pixels[..., 3] > 0).sum())

    def mask(self) -> np.ndarray:
        return self.pixels[..., 3] > 0


@dataclass(frozen=True)
class FilterThresholds:
    """Tunable limits for leaf rejection.

    ``base_dist_frac`` is relative to the source image diagonal; set it to
    None to skip the base-distance criterion (the bank for random placement
    does not anchor leaves at a plant center).
    """

    min_area: int = 100
    base_dist_frac: float | None = 0.15
    max_boundary_occlusion: float = 0.05


@dataclass
class FilterReport:
    """Partition of filtered cutouts into kept ids and (id, reason) pairs."""

    kept: list[str] = field(default_factory=list)
    discarded: list[tuple[str, str]] = field(default_factory=list)

    def counts_by_reason(self) -> dict[str, int]:
        counts = {reason: 0 for reason in FILTER_REASONS}
        for _, reason in self.discarded:
            counts[reason] += 1
        return counts

    def extend(self, other: "FilterReport") -> None:
        self.kept.extend(other.kept)
        self.discarded.extend(other.discarded)


@dataclass
class LeafBank:
    """Read-only collection of prepared cutouts consumed by the generators."""

    cutouts: list[LeafCutout]
    kind: str  # "aligned" or "prescaled"

    def __post_init__(self):
        if self.kind not in ("aligned", "prescaled"):
            raise ConfigurationError(f"unknown bank kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.cutouts)

    def __getitem__(self, i: int) -> LeafCutout:
        return self.cutouts[i]


def extract_leaves(img: AnnotatedImage) -> list[LeafCutout]:
    """Cut every labeled leaf out of an annotated image.

    Each cutout is the tight bounding box of one label value, alpha 255
    exactly on that label's pixels, RGB zeroed elsewhere. The anchor is the
    leaf base: the alpha pixel nearest the plant center, in cutout-local
    coordinates.

    Raises:
        EmptyExtractionError: the label raster has no nonzero values.
    """
    values = img.label_values()
    if not values:
        raise EmptyExtractionError(f"{img.source_id}: no nonzero instance labels")
    center = img.center()
    max_value = int(img.labels.max())
    boxes = ndimage.find_objects(img.labels.astype(np.int64, copy=False), max_label=max_value)
    cutouts: list[LeafCutout] = []
    for value in values:
        sl = boxes[value - 1]
        mask = img.labels[sl] == value
        rgba = np.zeros(mask.shape + (4,), dtype=np.uint8)
        for c in range(3):
            rgba[..., c][mask] = img.pixels[sl + (c,)][mask]
        rgba[..., 3][mask] = 255
        y0, x0 = sl[0].start, sl[1].start
        ax, ay = raster.nearest_point(mask, (center[0] - x0, center[1] - y0))
        cutouts.append(
            LeafCutout(
                pixels=rgba,
                anchor=(float(ax), float(ay)),
                source_id=img.source_id,
                label=value,
                aligned=False,
                subset_tag=img.subset_tag,
                origin=(int(x0), int(y0)),
            )
        )
    return cutouts


def principal_axis(cutout: LeafCutout, plant_center: tuple[float, float]) -> float:
    """Angle of the segment from the plant center to the farthest alpha pixel.

    ``plant_center`` is in the cutout's own coordinate frame. Angles follow
    the package convention (x right, y down, counterclockwise after flipping
    y), so a tip straight above the center reads 90.

    Returns:
        Angle in degrees, range [0, 360).
    """
    fx, fy = raster.farthest_point(cutout.mask(), plant_center)
    dx = fx - float(plant_center[0])
    dy = fy - float(plant_center[1])
    return math.degrees(math.atan2(-dy, dx)) % 360.0


def align_canonical(cutout: LeafCutout, plant_center: tuple[float, float]) -> LeafCutout:
    """Rotate a cutout so its tip points up and re-crop around the base.

    The raster is rotated by (90 - principal_axis) about the plant center,
    then cropped so the pixel nearest the rotated plant center sits at
    (floor(width/2), height - 1). Content below the plant-center row is
    discarded; columns pad symmetrically with transparent pixels.

    Applying this to an already-aligned cutout (with its anchor as the
    center) is a near no-op, moving the farthest-pixel column by at most
    one pixel.

    Raises:
        DegenerateMaskError: the cutout has no alpha pixels.
    """
    theta = principal_axis(cutout, plant_center)
    rotated, pivot = raster.rotate(cutout.pixels, (90.0 - theta) % 360.0, plant_center)
    alpha = rotated[..., 3] > 0
    ys, xs = np.nonzero(alpha)
    if xs.size == 0:
        raise DegenerateMaskError(f"{cutout.id}: alpha lost during alignment")
    cx = int(math.floor(pivot[0] + 0.5))
    cy = int(math.floor(pivot[1] + 0.5))
    x0, x1 = int(xs.min()), int(xs.max())
    m = max(cx - x0, x1 - cx, 0)
    y_top = min(int(ys.min()), cy)
    width = 2 * m + 1
    height = cy - y_top + 1

    out = np.zeros((height, width, 4), dtype=np.uint8)
    src_x0 = max(cx - m, 0)
    src_x1 = min(cx + m + 1, rotated.shape[1])
    src_y0 = max(y_top, 0)
    src_y1 = min(cy + 1, rotated.shape[0])
    if src_x0 < src_x1 and src_y0 < src_y1:
        dst_x0 = src_x0 - (cx - m)
        dst_y0 = src_y0 - y_top
        out[dst_y0 : dst_y0 + (src_y1 - src_y0), dst_x0 : dst_x0 + (src_x1 - src_x0)] = rotated[
            src_y0:src_y1, src_x0:src_x1
        ]
    return replace(
        cutout,
        pixels=out,
        anchor=(float(m), float(height - 1)),
        aligned=True,
    )


def _boundary_pixels(mask: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask, structure=_CROSS_3X3, border_value=0)
    return mask & ~eroded


def occlusion_fraction(labels: np.ndarray, value: int) -> float:
    """Fraction of a leaf's boundary pixels 8-adjacent to another instance."""
    mask = labels == value
    boundary = _boundary_pixels(mask)
    total = int(boundary.sum())
    if total == 0:
        return 0.0
    others = (labels != 0) & ~mask
    near_others = ndimage.binary_dilation(others, structure=_BOX_3X3)
    return float((boundary & near_others).sum()) / total


def filter_leaves(
    cutouts: list[LeafCutout],
    source: AnnotatedImage,
    thresholds: FilterThresholds | None = None,
) -> FilterReport:
    """Partition cutouts of one source image into kept and discarded.

    Criteria are evaluated in a fixed order, recording the first failure:
    more than one 4-connected alpha component; area below ``min_area``; base
    pixel farther from the plant center than ``base_dist_frac`` of the image
    diagonal; more than ``max_boundary_occlusion`` of the boundary adjacent
    to another instance. Pure function of its inputs.
    """
    t = thresholds or FilterThresholds()
    report = FilterReport()
    h, w = source.labels.shape
    diagonal = math.hypot(w, h)
    center = source.center() if t.base_dist_frac is not None else None
    for cutout in cutouts:
        reason = None
        _, n_components = raster.connected_components(cutout.mask())
        if n_components > 1:
            reason = "multi_component"
        elif cutout.area_px < t.min_area:
            reason = "too_small"
        elif t.base_dist_frac is not None:
            ox, oy = cutout.origin or (0, 0)
            bx = cutout.anchor[0] + ox
            by = cutout.anchor[1] + oy
            if math.hypot(bx - center[0], by - center[1]) > t.base_dist_frac * diagonal:
                reason = "base_far_from_center"
        if reason is None and occlusion_fraction(source.labels, cutout.label) > t.max_boundary_occlusion:
            reason = "occluded"
        if reason is None:
            report.kept.append(cutout.id)
        else:
            report.discarded.append((cutout.id, reason))
    return report


def prescale_cutout(cutout: LeafCutout, longest_dim: int = 600) -> LeafCutout:
    """Uniformly rescale a cutout so its longest raster side is exact.

    The anchor moves to the centroid of the scaled alpha (the leaf center
    used for random placement). The upscale factor must stay within the
    raster kernel's 16x limit, so extremely small cutouts are rejected.
    """
    h, w = cutout.pixels.shape[:2]
    s = longest_dim / max(w, h)
    scaled = raster.scale(cutout.pixels, s, s)
    ys, xs = np.nonzero(scaled[..., 3] > 0)
    if xs.size == 0:
        raise DegenerateMaskError(f"{cutout.id}: alpha lost during prescale")
    return replace(
        cutout,
        pixels=scaled,
        anchor=(float(xs.mean()), float(ys.mean())),
        aligned=False,
    )


def build_bank(
    sources: list[AnnotatedImage],
    kind: str,
    thresholds: FilterThresholds | None = None,
    prescale_longest_dim: int = 600,
) -> tuple[LeafBank, FilterReport]:
    """Run the full ingest pipeline over a set of annotated sources.

    ``kind`` selects the normalization applied to surviving leaves:
    "aligned" rotates each to canonical form for center-anchored placement,
    "prescaled" rescales each to a fixed longest side for random placement.
    Default thresholds for "prescaled" skip the base-distance criterion.

    Returns:
        (bank, merged filter report over all sources)
    """
    if kind not in ("aligned", "prescaled"):
        raise ConfigurationError(f"unknown bank kind {kind!r}")
    if thresholds is None:
        thresholds = (
            FilterThresholds() if kind == "aligned" else FilterThresholds(base_dist_frac=None)
        )
    report = FilterReport()
    prepared: list[LeafCutout] = []
    for source in sources:
        cutouts = extract_leaves(source)
        source_report = filter_leaves(cutouts, source, thresholds)
        report.extend(source_report)
        kept_ids = set(source_report.kept)
        center = source.center()
        for cutout in cutouts:
            if cutout.id not in kept_ids:
                continue
            if kind == "aligned":
                ox, oy = cutout.origin
                local_center = (center[0] - ox, center[1] - oy)
                prepared.append(align_canonical(cutout, local_center))
            else:
                prepared.append(prescale_cutout(cutout, prescale_longest_dim))
    if not prepared:
        raise ConfigurationError("no leaves survived filtering; bank would be empty")
    return LeafBank(cutouts=prepared, kind=kind), report
