"""Shared synthetic fixtures: kite-shaped leaves and annotated source images.

A kite is a convex quad with a blunt base vertex and a pointed tip, so the
pixel farthest from any interior origin is always in the tip wedge. That makes
alignment behavior easy to predict without reimplementing the geometry.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected region of a boolean mask (fixture cleanup)."""
    labeled, count = ndimage.label(mask, structure=_CROSS)
    if count <= 1:
        return mask
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0
    return labeled == int(np.argmax(sizes))


def direction(angle_deg: float) -> tuple[float, float]:
    """Unit vector in image coords (y down) for a y-up angle."""
    r = math.radians(angle_deg)
    return math.cos(r), -math.sin(r)


def convex_polygon_mask(size: tuple[int, int], verts: list[tuple[float, float]]) -> np.ndarray:
    """Boolean mask of pixel centers inside a convex polygon (either winding)."""
    w, h = size
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    crosses = []
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        crosses.append((x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0))
    pos = np.logical_and.reduce([c >= 0 for c in crosses])
    neg = np.logical_and.reduce([c <= 0 for c in crosses])
    return pos | neg


def kite_vertices(
    base: tuple[float, float], angle_deg: float, length: float, half_width: float
) -> list[tuple[float, float]]:
    """Vertices of a kite with its base vertex at ``base`` pointing along ``angle_deg``."""
    ux, uy = direction(angle_deg)
    px, py = -uy, ux
    bx, by = base
    mx, my = bx + 0.55 * length * ux, by + 0.55 * length * uy
    return [
        (bx, by),
        (mx + half_width * px, my + half_width * py),
        (bx + length * ux, by + length * uy),
        (mx - half_width * px, my - half_width * py),
    ]


def kite_rgba(
    length: float = 40.0,
    half_width: float = 9.0,
    angle_deg: float = 90.0,
    color: tuple[int, int, int] = (60, 150, 70),
    pad: int = 3,
) -> np.ndarray:
    """Standalone RGBA kite raster with a little padding on all sides."""
    extent = int(math.ceil(length + 2 * half_width)) + 2 * pad
    base = (extent / 2 - (length / 2) * direction(angle_deg)[0],
            extent / 2 - (length / 2) * direction(angle_deg)[1])
    mask = convex_polygon_mask(
        (extent, extent), kite_vertices(base, angle_deg, length, half_width)
    )
    rgba = np.zeros((extent, extent, 4), dtype=np.uint8)
    rgba[..., 0][mask] = color[0]
    rgba[..., 1][mask] = color[1]
    rgba[..., 2][mask] = color[2]
    rgba[..., 3][mask] = 255
    return rgba


def paint_kite(
    rgb: np.ndarray,
    labels: np.ndarray,
    label: int,
    base: tuple[float, float],
    angle_deg: float,
    length: float,
    half_width: float,
    color: tuple[int, int, int],
    require_isolated: bool = True,
) -> np.ndarray:
    """Rasterize one kite into an annotated image pair; returns its mask.

    With ``require_isolated`` the 3x3 dilation of the new mask must not touch
    existing labels, guaranteeing a zero occlusion score for every leaf.
    """
    h, w = labels.shape
    mask = convex_polygon_mask((w, h), kite_vertices(base, angle_deg, length, half_width))
    if not mask.any():
        raise ValueError("kite fell outside the canvas")
    # Sharp tips can rasterize into diagonal-only pixel chains; trim to the
    # main 4-connected body so fixtures are single-component by construction.
    mask = largest_component(mask)
    if require_isolated:
        grown = np.zeros_like(mask)
        grown |= mask
        grown[1:, :] |= mask[:-1, :]
        grown[:-1, :] |= mask[1:, :]
        grown[:, 1:] |= mask[:, :-1]
        grown[:, :-1] |= mask[:, 1:]
        grown[1:, 1:] |= mask[:-1, :-1]
        grown[:-1, :-1] |= mask[1:, 1:]
        grown[1:, :-1] |= mask[:-1, 1:]
        grown[:-1, 1:] |= mask[1:, :-1]
        if (labels[grown] != 0).any():
            raise ValueError(f"kite {label} touches an existing leaf; adjust fixture")
    labels[mask] = label
    for c in range(3):
        rgb[..., c][mask] = color[c]
    return mask


def build_source(
    n_leaves: int = 6,
    size: tuple[int, int] = (160, 160),
    center: tuple[float, float] | None = None,
    seed: int = 0,
    base_offset: float = 10.0,
    length_range: tuple[float, float] = (30.0, 40.0),
    half_width_range: tuple[float, float] = (4.5, 7.0),
) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """Annotated rosette: kites radiating from a plant center at spaced angles.

    Every leaf passes the standard filters (one component, ample area, base
    near the center, no occlusion).

    Returns:
        (rgb, labels, plant_center)
    """
    w, h = size
    if center is None:
        center = (w / 2.0, h / 2.0)
    rng = np.random.default_rng(seed)
    rgb = np.full((h, w, 3), 30, dtype=np.uint8)
    labels = np.zeros((h, w), dtype=np.uint16)
    slot = 360.0 / n_leaves
    for k in range(n_leaves):
        angle = (k + 0.5 + float(rng.uniform(-0.2, 0.2))) * slot
        length = float(rng.uniform(*length_range))
        half_width = float(rng.uniform(*half_width_range))
        ux, uy = direction(angle)
        base = (center[0] + base_offset * ux, center[1] + base_offset * uy)
        color = tuple(int(v) for v in rng.integers(40, 220, size=3))
        paint_kite(rgb, labels, k + 1, base, angle, length, half_width, color)
    return rgb, labels, center


def random_background(size: tuple[int, int], seed: int = 0) -> np.ndarray:
    """Deterministic noise background of the given (width, height)."""
    w, h = size
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
