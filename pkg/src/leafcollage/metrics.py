"""Segmentation and counting metrics: per-instance best Dice, binary
foreground Dice, signed/absolute count differences, IOU-threshold detection,
and directory-tree evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvaluationError, InvalidInputError


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A∩B| / (|A|+|B|) of two binary masks.

    Two empty masks agree perfectly and score 1.
    """
    _check_dims(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def _compact(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a label raster to contiguous 0..K values; returns (indexed, values)."""
    values = np.unique(labels)
    values = values[values > 0]
    lookup = np.zeros(int(labels.max()) + 1 if labels.size else 1, dtype=np.int64)
    lookup[values] = np.arange(1, values.size + 1)
    return lookup[labels], values


def _pairwise_tables(pred: np.ndarray, gt: np.ndarray):
    """Joint pixel counts between every (gt, pred) instance pair.

    Returns (overlap[G, P], gt_areas[G], pred_areas[P], gt_values, pred_values).
    """
    gt_idx, gt_values = _compact(gt)
    pred_idx, pred_values = _compact(pred)
    n_gt = gt_values.size
    n_pred = pred_values.size
    joint = np.bincount(
        gt_idx.ravel() * (n_pred + 1) + pred_idx.ravel(),
        minlength=(n_gt + 1) * (n_pred + 1),
    ).reshape(n_gt + 1, n_pred + 1)
    overlap = joint[1:, 1:]
    gt_areas = joint[1:, :].sum(axis=1)
    pred_areas = joint[:, 1:].sum(axis=0)
    return overlap, gt_areas, pred_areas, gt_values, pred_values


def _best_dice_directions(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    overlap, gt_areas, pred_areas, gt_values, pred_values = _pairwise_tables(pred, gt)
    n_gt = gt_values.size
    n_pred = pred_values.size
    if n_gt == 0 and n_pred == 0:
        return 1.0, 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0, 0.0
    dice_matrix = 2.0 * overlap / (gt_areas[:, None] + pred_areas[None, :])
    toward_gt = float(dice_matrix.max(axis=1).mean())
    toward_pred = float(dice_matrix.max(axis=0).mean())
    return toward_gt, toward_pred


def best_dice(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Best-match Dice between instance label rasters.

    The directional value averages, over ground-truth instances, the best
    Dice any predicted instance achieves against each. The symmetric value
    is the minimum of the two directions. Both are 1 when both rasters have
    no instances and 0 when exactly one side is empty.

    Returns:
        (directional pred-to-gt, symmetric)
    """
    _check_dims(pred, gt)
    toward_gt, toward_pred = _best_dice_directions(pred, gt)
    return toward_gt, min(toward_gt, toward_pred)


def fgbg_dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice of the binarized foregrounds; instance identity is irrelevant."""
    _check_dims(pred, gt)
    return dice(np.asarray(pred) > 0, np.asarray(gt) > 0)


def instance_count(labels: np.ndarray) -> int:
    values = np.unique(labels)
    return int((values > 0).sum())


def count_diffs(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    """Signed and absolute instance-count difference (negative = undercount).

    Returns:
        (count(pred) - count(gt), absolute value of the same)
    """
    diff = instance_count(pred) - instance_count(gt)
    return diff, abs(diff)


def iou_detection_eval(
    pred: np.ndarray,
    gt: np.ndarray,
    iou_thresh: float = 0.8,
    min_area: int = 700,
) -> tuple[int, int]:
    """Detection tally over large ground-truth instances.

    Ground-truth instances with area > ``min_area`` are eligible. Each is
    detected when a predicted instance reaches IOU ≥ ``iou_thresh`` with it,
    under greedy one-to-one matching by descending IOU (ties resolved by
    ascending gt then pred label), so one predicted blob cannot detect
    several leaves.

    Returns:
        (detected, missed) over eligible ground-truth instances.
    """
    _check_dims(pred, gt)
    overlap, gt_areas, pred_areas, gt_values, pred_values = _pairwise_tables(pred, gt)
    eligible = gt_areas > min_area
    n_eligible = int(eligible.sum())
    if n_eligible == 0 or pred_values.size == 0:
        return 0, n_eligible
    union = gt_areas[:, None] + pred_areas[None, :] - overlap
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, overlap / union, 0.0)
    candidates = [
        (-iou[g, p], int(gt_values[g]), int(pred_values[p]), g, p)
        for g in range(gt_values.size)
        if eligible[g]
        for p in range(pred_values.size)
        if iou[g, p] >= iou_thresh
    ]
    candidates.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    detected = 0
    for _, _, _, g, p in candidates:
        if g in used_gt or p in used_pred:
            continue
        used_gt.add(g)
        used_pred.add(p)
        detected += 1
    return detected, n_eligible - detected


@dataclass
class ImageMetrics:
    """All per-image scores; ``best_dice`` is the symmetric headline value."""

    image_id: str
    best_dice: float
    bd_pred_to_gt: float
    bd_gt_to_pred: float
    fgbg_dice: float
    diff_fg: int
    abs_diff_fg: int


@dataclass
class MetricsReport:
    """Per-image records, aggregate means, and unmatched-file listings."""

    records: list[ImageMetrics] = field(default_factory=list)
    missing_pred: list[str] = field(default_factory=list)
    missing_gt: list[str] = field(default_factory=list)

    def aggregates(self) -> dict[str, float]:
        if not self.records:
            return {"best_dice": 0.0, "fgbg_dice": 0.0, "diff_fg": 0.0, "abs_diff_fg": 0.0}
        n = len(self.records)
        return {
            "best_dice": sum(r.best_dice for r in self.records) / n,
            "fgbg_dice": sum(r.fgbg_dice for r in self.records) / n,
            "diff_fg": sum(r.diff_fg for r in self.records) / n,
            # Mean of per-image absolutes, not the absolute of the mean.
            "abs_diff_fg": sum(r.abs_diff_fg for r in self.records) / n,
        }


def score_pair(image_id: str, pred: np.ndarray, gt: np.ndarray) -> ImageMetrics:
    """Compute one image's record from its two label rasters."""
    _check_dims(pred, gt)
    toward_gt, toward_pred = _best_dice_directions(pred, gt)
    symmetric = min(toward_gt, toward_pred)
    diff, abs_diff = count_diffs(pred, gt)
    return ImageMetrics(
        image_id=image_id,
        best_dice=symmetric,
        bd_pred_to_gt=toward_gt,
        bd_gt_to_pred=toward_pred,
        fgbg_dice=fgbg_dice(pred, gt),
        diff_fg=diff,
        abs_diff_fg=abs_diff,
    )


def evaluate_dataset(pred_dir: str | Path, gt_dir: str | Path) -> MetricsReport:
    """Score every image id present in both label trees.

    Ids come from files named ``{image_id}_label.png``. Ids present on one
    side only are reported in the missing lists, never silently skipped.

    Raises:
        EvaluationError: the trees share no image ids.
    """
    from . import dataset_io

    pred_ids = dataset_io.discover_label_ids(pred_dir)
    gt_ids = dataset_io.discover_label_ids(gt_dir)
    common = sorted(pred_ids & gt_ids)
    if not common:
        raise EvaluationError(f"no shared image ids between {pred_dir} and {gt_dir}")
    report = MetricsReport(
        missing_pred=sorted(gt_ids - pred_ids),
        missing_gt=sorted(pred_ids - gt_ids),
    )
    for image_id in common:
        pred = dataset_io.load_labels(Path(pred_dir) / f"{image_id}_label.png")
        gt = dataset_io.load_labels(Path(gt_dir) / f"{image_id}_label.png")
        report.records.append(score_pair(image_id, pred, gt))
    return report
