"""Geometry and compositing kernel: rotation, scaling, alpha-over compositing
with simultaneous label update, connected components, and distance queries.

Coordinate convention used everywhere in this package: image coordinates with
x growing right and y growing down, pixel (x, y) centered at integer (x, y).
Angles are measured counterclockwise in the mathematical frame obtained by
flipping y, so a vector pointing "up" on screen sits at 90 degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateMaskError,
    DegenerateScaleError,
    InvalidInputError,
    InvalidPlacementError,
)

# Alpha above this 8-bit value counts as covered; the midpoint of the range
# (0.5 when normalized). Nearest-neighbor resampling keeps alpha binary, so
# in practice only 0 and 255 occur.
ALPHA_COVER_THRESHOLD = 127

LABEL_DTYPE = np.uint16

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class Scene:
    """A canvas under construction: RGB pixels plus an instance label raster.

    ``next_z`` counts the placements applied so far; labels hold the 1-based
    placement order of the topmost leaf covering each pixel (0 = background).
    """

    pixels: np.ndarray
    labels: np.ndarray
    next_z: int = 0

    def __post_init__(self):
        if self.pixels.shape[:2] != self.labels.shape:
            raise InvalidInputError(
                f"scene labels {self.labels.shape} do not match pixels {self.pixels.shape[:2]}"
            )

    @classmethod
    def from_background(cls, background: np.ndarray) -> "Scene":
        """Start a scene from an RGB background; labels all zero."""
        pixels = np.ascontiguousarray(background, dtype=np.uint8).copy()
        labels = np.zeros(pixels.shape[:2], dtype=LABEL_DTYPE)
        return cls(pixels=pixels, labels=labels)

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) of the canvas."""
        return self.pixels.shape[1], self.pixels.shape[0]

    def foreground(self) -> np.ndarray:
        return self.labels > 0


@dataclass
class Placement:
    """One leaf placement: where the cutout anchor lands and how the cutout
    is transformed before pasting. ``z`` is the 1-based placement order."""

    leaf_id: str
    position: tuple[float, float]
    angle_deg: float
    scale_x: float = 1.0
    scale_y: float = 1.0
    z: int = 1

    def __post_init__(self):
        if not 0.0 <= self.angle_deg < 360.0:
            raise InvalidInputError(f"angle_deg {self.angle_deg} outside [0, 360)")
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise InvalidInputError("scale factors must be positive")
        if self.z < 1:
            raise InvalidInputError("z is 1-based")


def _trig(angle_deg: float) -> tuple[float, float]:
    # Exact cos/sin at quarter turns so axis-aligned rotations stay lossless.
    a = angle_deg % 360.0
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    r = math.radians(a)
    return math.cos(r), math.sin(r)


def _bilinear(channel_stack: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) float data at continuous coords with edge clamping."""
    h, w = channel_stack.shape[:2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    tx = (sx - x0)[..., None]
    ty = (sy - y0)[..., None]
    x0 = np.clip(x0.astype(np.int64), 0, w - 1)
    y0 = np.clip(y0.astype(np.int64), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    p00 = channel_stack[y0, x0]
    p01 = channel_stack[y0, x1]
    p10 = channel_stack[y1, x0]
    p11 = channel_stack[y1, x1]
    top = p00 * (1 - tx) + p01 * tx
    bot = p10 * (1 - tx) + p11 * tx
    return top * (1 - ty) + bot * ty


def _nearest_index(coord: np.ndarray) -> np.ndarray:
    # Half-up rounding; keeps quarter-turn samples exact.
    return np.floor(coord + 0.5).astype(np.int64)


def rotate(
    raster: np.ndarray, angle_deg: float, pivot: tuple[float, float]
) -> tuple[np.ndarray, tuple[float, float]]:
    """Rotate an RGBA raster about a pivot, expanding bounds to fit.

    Alpha is resampled nearest-neighbor (stays binary), RGB bilinear.
    Positive angles rotate counterclockwise in the y-up frame.

    Args:
        raster: (H, W, 4) uint8 RGBA.
        angle_deg: Rotation angle in degrees; must be finite.
        pivot: (x, y) rotation center in input coordinates.

    Returns:
        (rotated raster, pivot location in the output raster's coordinates).
    """
    if not math.isfinite(angle_deg):
        raise InvalidInputError("rotation angle must be finite")
    h, w = raster.shape[:2]
    c, s = _trig(angle_deg)
    px, py = float(pivot[0]), float(pivot[1])
    if (c, s) == (1.0, 0.0):
        return raster.copy(), (px, py)

    # Forward map in image coords (y down): q = R (v - p) + p, R = [[c, s], [-s, c]].
    corners = np.array(
        [[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5], [w - 0.5, h - 0.5]]
    )
    rx = corners[:, 0] - px
    ry = corners[:, 1] - py
    fx = np.round(c * rx + s * ry + px, 9)
    fy = np.round(-s * rx + c * ry + py, 9)
    x_lo = int(np.floor(fx.min() + 0.5))
    x_hi = int(np.ceil(fx.max() - 0.5))
    y_lo = int(np.floor(fy.min() + 0.5))
    y_hi = int(np.ceil(fy.max() - 0.5))
    out_w = x_hi - x_lo + 1
    out_h = y_hi - y_lo + 1

    gx, gy = np.meshgrid(
        np.arange(out_w, dtype=np.float64) + x_lo,
        np.arange(out_h, dtype=np.float64) + y_lo,
    )
    # Inverse map: v = R^T (q - p) + p.
    qx = gx - px
    qy = gy - py
    sx = c * qx - s * qy + px
    sy = s * qx + c * qy + py

    out = np.zeros((out_h, out_w, 4), dtype=np.uint8)
    nx = _nearest_index(sx)
    ny = _nearest_index(sy)
    inside = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    alpha = np.zeros((out_h, out_w), dtype=np.uint8)
    alpha[inside] = raster[..., 3][ny[inside], nx[inside]]
    out[..., 3] = alpha

    covered = alpha > 0
    if covered.any():
        rgb = _bilinear(raster[..., :3].astype(np.float64), sx, sy)
        out[..., :3][covered] = np.rint(rgb[covered]).astype(np.uint8)
    return out, (px - x_lo, py - y_lo)


def scale(raster: np.ndarray, sx: float, sy: float) -> np.ndarray:
    """Resample an RGBA raster by independent horizontal/vertical factors.

    Output dimensions are round(w * sx) x round(h * sy); alpha nearest-neighbor,
    RGB bilinear.
    """
    if not (0 < sx <= 16 and 0 < sy <= 16):
        raise InvalidInputError(f"scale factors ({sx}, {sy}) outside (0, 16]")
    h, w = raster.shape[:2]
    out_w = int(round(w * sx))
    out_h = int(round(h * sy))
    if out_w < 1 or out_h < 1:
        raise DegenerateScaleError(f"scaling {w}x{h} by ({sx}, {sy}) collapses a dimension")
    if (out_w, out_h) == (w, h):
        return raster.copy()

    # Pixel-center mapping uses the realized dimension ratio, so identity
    # factors reproduce the input exactly.
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)

    out = np.zeros((out_h, out_w, 4), dtype=np.uint8)
    nx = np.clip(_nearest_index(gx), 0, w - 1)
    ny = np.clip(_nearest_index(gy), 0, h - 1)
    out[..., 3] = raster[..., 3][ny, nx]
    rgb = _bilinear(raster[..., :3].astype(np.float64), gx, gy)
    covered = out[..., 3] > 0
    out[..., :3][covered] = np.rint(rgb[covered]).astype(np.uint8)
    return out


def scale_point(
    point: tuple[float, float], in_size: tuple[int, int], out_size: tuple[int, int]
) -> tuple[float, float]:
    """Map a coordinate through the pixel-center scaling used by `scale`."""
    (x, y), (w, h), (ow, oh) = point, in_size, out_size
    return ((x + 0.5) * ow / w - 0.5, (y + 0.5) * oh / h - 0.5)


def transform_cutout(
    rgba: np.ndarray,
    anchor: tuple[float, float],
    scale_x: float,
    scale_y: float,
    angle_deg: float,
) -> tuple[np.ndarray, tuple[float, float]]:
    """Scale then rotate a cutout about its anchor.

    Returns the transformed raster and the anchor's location within it.
    """
    h, w = rgba.shape[:2]
    ax, ay = float(anchor[0]), float(anchor[1])
    if (scale_x, scale_y) != (1.0, 1.0):
        scaled = scale(rgba, scale_x, scale_y)
        ax, ay = scale_point((ax, ay), (w, h), (scaled.shape[1], scaled.shape[0]))
        rgba = scaled
    if angle_deg % 360.0 != 0.0:
        rgba, (ax, ay) = rotate(rgba, angle_deg, (ax, ay))
    return rgba, (ax, ay)


def paste_window(
    pivot: tuple[float, float],
    position: tuple[float, float],
    raster_size: tuple[int, int],
    scene_size: tuple[int, int],
):
    """Clip a transformed cutout against the scene.

    Returns (scene_slice, cutout_slice) index pairs, or None when the cutout
    falls entirely outside the scene.
    """
    ox = int(math.floor(position[0] - pivot[0] + 0.5))
    oy = int(math.floor(position[1] - pivot[1] + 0.5))
    cw, ch = raster_size
    sw, sh = scene_size
    x0 = max(ox, 0)
    y0 = max(oy, 0)
    x1 = min(ox + cw, sw)
    y1 = min(oy + ch, sh)
    if x0 >= x1 or y0 >= y1:
        return None
    scene_sl = (slice(y0, y1), slice(x0, x1))
    cut_sl = (slice(y0 - oy, y1 - oy), slice(x0 - ox, x1 - ox))
    return scene_sl, cut_sl


def composite_leaf(scene: Scene, cutout, placement: Placement) -> Scene:
    """Add one leaf to the scene, updating pixels and labels together.

    The cutout is scaled, rotated about its anchor, and pasted with the anchor
    at ``placement.position``. RGB is written where transformed alpha exceeds
    the cover threshold; labels at those pixels are set to ``placement.z``,
    overwriting lower z (last added leaf on top). Content outside the scene is
    clipped. Mutates ``scene`` in place and returns it.
    """
    if placement.z != scene.next_z + 1:
        raise InvalidPlacementError(
            f"placement z={placement.z} but scene expects {scene.next_z + 1}"
        )
    sw, sh = scene.size
    x, y = placement.position
    if not (0 <= x < sw and 0 <= y < sh):
        raise InvalidPlacementError(
            f"anchor position ({x}, {y}) outside {sw}x{sh} scene"
        )
    rgba, pivot = transform_cutout(
        cutout.pixels, cutout.anchor, placement.scale_x, placement.scale_y, placement.angle_deg
    )
    window = paste_window(pivot, (x, y), (rgba.shape[1], rgba.shape[0]), (sw, sh))
    if window is not None:
        scene_sl, cut_sl = window
        patch = rgba[cut_sl]
        covered = patch[..., 3] > ALPHA_COVER_THRESHOLD
        scene.pixels[scene_sl][covered] = patch[..., :3][covered]
        scene.labels[scene_sl][covered] = placement.z
    scene.next_z += 1
    return scene


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labeling with labels 1..count in raster-scan discovery order."""
    labeled, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_FOUR_CONN)
    if count > 1:
        # Enforce first-touch ordering independent of scipy internals.
        flat = labeled.ravel()
        values, first = np.unique(flat, return_index=True)
        nonzero = values > 0
        order = np.argsort(first[nonzero])
        remap = np.zeros(count + 1, dtype=labeled.dtype)
        remap[values[nonzero][order]] = np.arange(1, count + 1)
        labeled = remap[labeled]
    return labeled.astype(np.int32), int(count)


def farthest_point(mask: np.ndarray, origin: tuple[float, float]) -> tuple[int, int]:
    """Alpha pixel at maximal Euclidean distance from ``origin``.

    Ties break to the smallest row, then smallest column.

    Returns:
        (x, y) of the farthest mask pixel.
    """
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if xs.size == 0:
        raise DegenerateMaskError("farthest_point on an empty mask")
    dx = xs.astype(np.float64) - float(origin[0])
    dy = ys.astype(np.float64) - float(origin[1])
    d2 = dx * dx + dy * dy
    # np.nonzero yields row-major order, so the first argmax is the
    # smallest-row, smallest-column tie winner.
    i = int(np.argmax(d2))
    return int(xs[i]), int(ys[i])


def nearest_point(mask: np.ndarray, origin: tuple[float, float]) -> tuple[int, int]:
    """Alpha pixel at minimal Euclidean distance from ``origin`` (same tie rule)."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if xs.size == 0:
        raise DegenerateMaskError("nearest_point on an empty mask")
    dx = xs.astype(np.float64) - float(origin[0])
    dy = ys.astype(np.float64) - float(origin[1])
    i = int(np.argmin(dx * dx + dy * dy))
    return int(xs[i]), int(ys[i])


def label_boundaries(labels: np.ndarray) -> np.ndarray:
    """Pixels whose label differs from a 4-neighbor (both sides of a transition)."""
    labels = np.asarray(labels)
    b = np.zeros(labels.shape, dtype=bool)
    diff_h = labels[:, 1:] != labels[:, :-1]
    b[:, 1:] |= diff_h
    b[:, :-1] |= diff_h
    diff_v = labels[1:, :] != labels[:-1, :]
    b[1:, :] |= diff_v
    b[:-1, :] |= diff_v
    return b


def relabel_visible(scene: Scene, min_visible: int) -> int:
    """Drop placements with fewer than ``min_visible`` visible pixels.

    Surviving labels are renumbered contiguously in z order; dropped pixels
    become background. Returns the number of surviving instances.
    """
    counts = np.bincount(scene.labels.ravel(), minlength=scene.next_z + 1)
    keep = [z for z in range(1, scene.next_z + 1) if counts[z] >= min_visible]
    remap = np.zeros(max(scene.next_z + 1, counts.size), dtype=LABEL_DTYPE)
    for new, old in enumerate(keep, start=1):
        remap[old] = new
    scene.labels = remap[scene.labels]
    return len(keep)
