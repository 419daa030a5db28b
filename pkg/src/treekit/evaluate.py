"""Tree-level evaluation of instance segmentations: IoU matching, detection metrics, height RMSE, and efficiency."""

from __future__ import annotations

__all__ = [
    "MatchRecord",
    "BinRow",
    "TreeCounts",
    "MetricsReport",
    "CEInput",
    "instance_iou",
    "contingency",
    "instance_heights",
    "match_instances",
    "rates_from_counts",
    "tree_metrics",
    "rmse_height",
    "local_f1",
    "height_bin_report",
    "compute_ce",
    "evaluate",
]

from dataclasses import dataclass, field
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .grouping import AlignmentError

MATCH_IOU = 0.5


@dataclass(frozen=True)
class MatchRecord:
    """A ground-truth / predicted instance pair with point-level IoU above 0.5."""

    gt_id: int
    pred_id: int
    iou: float
    gt_height: float
    pred_height: float
    n_intersection: int = 0
    n_gt: int = 0
    n_pred: int = 0


@dataclass(frozen=True)
class BinRow:
    bin_low: float
    bin_high: float
    n_gt: int
    n_tp: int
    detection_rate: float


@dataclass(frozen=True)
class TreeCounts:
    """Tree-level confusion counts and the rates derived from them."""

    tp: int
    fp: int
    fn: int
    gt_count: int
    pt_count: int
    detection_rate: float
    omission_rate: float
    commission_rate: float
    precision: float
    recall: float
    f1_tree: float


@dataclass(frozen=True)
class MetricsReport:
    counts: TreeCounts
    f1_local: float
    rmse_h: Optional[float]
    per_bin: List[BinRow] = field(default_factory=list)

    def __getattr__(self, name: str) -> Any:
        # Expose the count fields (tp, detection_rate, ...) directly on the report.
        if name != "counts" and "counts" in self.__dict__ and hasattr(self.counts, name):
            return getattr(self.counts, name)
        raise AttributeError(name)

    def to_dict(self) -> Dict[str, Any]:
        """JSON document with the fixed report keys."""
        c = self.counts
        return {
            "counts": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "gt": c.gt_count, "pt": c.pt_count},
            "detection_rate": c.detection_rate,
            "omission_rate": c.omission_rate,
            "commission_rate": c.commission_rate,
            "precision": c.precision,
            "recall": c.recall,
            "f1_tree": c.f1_tree,
            "f1_local": self.f1_local,
            "rmse_h_m": self.rmse_h,
            "per_bin": [
                {
                    "bin_low": row.bin_low,
                    "bin_high": row.bin_high,
                    "n_gt": row.n_gt,
                    "n_tp": row.n_tp,
                    "detection_rate": row.detection_rate,
                }
                for row in self.per_bin
            ],
        }

    def scalar_row(self) -> Dict[str, Any]:
        """Flat scalar fields, e.g. for one CSV row."""
        c = self.counts
        return {
            "tp": c.tp,
            "fp": c.fp,
            "fn": c.fn,
            "gt": c.gt_count,
            "pt": c.pt_count,
            "detection_rate": c.detection_rate,
            "omission_rate": c.omission_rate,
            "commission_rate": c.commission_rate,
            "precision": c.precision,
            "recall": c.recall,
            "f1_tree": c.f1_tree,
            "f1_local": self.f1_local,
            "rmse_h_m": self.rmse_h,
        }


@dataclass(frozen=True)
class CEInput:
    data_mb: float
    cores: float
    minutes: float

    def __post_init__(self) -> None:
        for name in ("data_mb", "cores", "minutes"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")


def instance_iou(a: Iterable[int], b: Iterable[int]) -> float:
    """Intersection over union of two point-index sets."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        raise ValueError("IoU of two empty sets is undefined")
    return len(a & b) / union


def _as_ids(ids: npt.ArrayLike) -> np.ndarray:
    return np.asarray(ids, dtype=np.int64).reshape(-1)


def contingency(gt: npt.ArrayLike, pred: npt.ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Point counts of every co-occurring (gt id, pred id) pair with both ids nonzero.

    Returns:
        ``(gt_ids, pred_ids, counts)`` with one entry per pair that shares at least one point, sorted by gt id and then
        pred id.
    """

    gt, pred = _as_ids(gt), _as_ids(pred)
    if len(gt) != len(pred):
        raise AlignmentError(f"ground truth has {len(gt)} points but prediction has {len(pred)}")
    both = (gt > 0) & (pred > 0)
    pairs, counts = np.unique(np.column_stack([gt[both], pred[both]]), axis=0, return_counts=True)
    pairs = pairs.reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1], counts


def instance_heights(ids: npt.ArrayLike, z: npt.ArrayLike) -> Dict[int, float]:
    """Vertical extent (max z - min z) of every nonzero instance."""
    ids, z = _as_ids(ids), np.asarray(z, dtype=np.float64).reshape(-1)
    keep = ids > 0
    unique, inverse = np.unique(ids[keep], return_inverse=True)
    top = np.full(len(unique), -np.inf)
    bottom = np.full(len(unique), np.inf)
    np.maximum.at(top, inverse, z[keep])
    np.minimum.at(bottom, inverse, z[keep])
    return {int(i): float(t - b) for i, t, b in zip(unique, top, bottom)}


def _sizes(ids: np.ndarray) -> Dict[int, int]:
    unique, counts = np.unique(ids[ids > 0], return_counts=True)
    return dict(zip(unique.tolist(), counts.tolist()))


def match_instances(gt: npt.ArrayLike, pred: npt.ArrayLike, z: Optional[npt.ArrayLike] = None) -> List[MatchRecord]:
    """
    Pairs ground-truth and predicted instances whose point-level IoU is strictly greater than 0.5.

    Because two disjoint instances cannot both overlap a third by more than half, every id appears in at most one
    match. Id 0 marks unassigned points on both sides and is never matched.

    Args:
        gt: Ground-truth instance id per point.
        pred: Predicted instance id per point.
        z: Point heights for the stored instance heights. Heights are 0 when omitted.

    Returns:
        Matches sorted by gt id.

    Raises:
        AlignmentError: If the labelings differ in length.
    """

    gt, pred = _as_ids(gt), _as_ids(pred)
    gt_ids, pred_ids, inter = contingency(gt, pred)
    gt_sizes, pred_sizes = _sizes(gt), _sizes(pred)
    if z is not None:
        gt_heights, pred_heights = instance_heights(gt, z), instance_heights(pred, z)
    matches = []
    for g, p, n in zip(gt_ids.tolist(), pred_ids.tolist(), inter.tolist()):
        union = gt_sizes[g] + pred_sizes[p] - n
        iou = n / union
        if iou > MATCH_IOU:
            matches.append(
                MatchRecord(
                    gt_id=g,
                    pred_id=p,
                    iou=iou,
                    gt_height=gt_heights[g] if z is not None else 0.0,
                    pred_height=pred_heights[p] if z is not None else 0.0,
                    n_intersection=n,
                    n_gt=gt_sizes[g],
                    n_pred=pred_sizes[p],
                )
            )
    return matches


def rates_from_counts(tp: int, gt_count: int, pt_count: int) -> TreeCounts:
    """
    Detection, omission, and commission rates plus precision, recall, and F1 from tree counts.

    Where a ratio has a zero denominator because nothing was predicted, commission rate, precision, and F1 are 0.
    """

    if gt_count <= 0:
        raise ValueError("metrics need at least one ground-truth tree")
    if not 0 <= tp <= min(gt_count, pt_count):
        raise ValueError(f"inconsistent counts: tp={tp}, gt={gt_count}, pt={pt_count}")
    fn = gt_count - tp
    fp = pt_count - tp
    detection = tp / gt_count
    omission = fn / gt_count
    precision = tp / pt_count if pt_count else 0.0
    # FP / PT written as 1 - precision so the identity holds bitwise, not just algebraically.
    commission = 1.0 - precision if pt_count else 0.0
    recall = detection
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return TreeCounts(tp, fp, fn, gt_count, pt_count, detection, omission, commission, precision, recall, f1)


def tree_metrics(matches: Sequence[MatchRecord], gt: npt.ArrayLike, pred: npt.ArrayLike) -> TreeCounts:
    gt_count = len(np.setdiff1d(np.unique(_as_ids(gt)), [0]))
    pt_count = len(np.setdiff1d(np.unique(_as_ids(pred)), [0]))
    return rates_from_counts(len(matches), gt_count, pt_count)


def rmse_height(matches: Sequence[MatchRecord]) -> float:
    """Root mean square difference between ground-truth and predicted heights over matched trees."""
    if not matches:
        raise ValueError("height RMSE is undefined without matched trees")
    errors = np.array([m.gt_height - m.pred_height for m in matches])
    return float(np.sqrt(np.mean(errors**2)))


def local_f1(matches: Sequence[MatchRecord]) -> float:
    """Mean point-level F1 of the matched pairs (precision against the prediction, recall against the ground truth)."""
    if not matches:
        raise ValueError("local F1 is undefined without matched trees")
    scores = []
    for m in matches:
        precision = m.n_intersection / m.n_pred
        recall = m.n_intersection / m.n_gt
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def height_bin_report(
    gt_heights: Dict[int, float], matches: Sequence[MatchRecord], bin_height: float = 5.0
) -> List[BinRow]:
    """
    Detection rate per ground-truth height class ``[k * bin_height, (k + 1) * bin_height)``.

    Args:
        gt_heights: Height of every ground-truth tree, keyed by id.
        matches: Matches of the same evaluation.
        bin_height: Bin width in meters.

    Returns:
        Rows for non-empty bins in ascending order.
    """

    if not bin_height > 0:
        raise ValueError(f"bin height must be positive, got {bin_height}")
    matched = {m.gt_id for m in matches}
    per_bin: Dict[int, List[int]] = {}
    for gt_id, height in gt_heights.items():
        k = math.floor(height / bin_height)
        tally = per_bin.setdefault(k, [0, 0])
        tally[0] += 1
        tally[1] += gt_id in matched
    return [
        BinRow(k * bin_height, (k + 1) * bin_height, n_gt, n_tp, n_tp / n_gt)
        for k, (n_gt, n_tp) in sorted(per_bin.items())
    ]


def compute_ce(data: CEInput) -> float:
    """Data processed per core per minute (MB / core / min)."""
    return data.data_mb / (data.cores * data.minutes)


def evaluate(
    gt: npt.ArrayLike, pred: npt.ArrayLike, z: npt.ArrayLike, bin_height: float = 5.0
) -> MetricsReport:
    """
    Complete evaluation of a predicted instance map against ground truth.

    ``f1_local`` is 0 and ``rmse_h`` is ``None`` when no tree was matched.
    """

    gt, pred = _as_ids(gt), _as_ids(pred)
    matches = match_instances(gt, pred, z)
    counts = tree_metrics(matches, gt, pred)
    gt_heights = instance_heights(gt, z)
    return MetricsReport(
        counts=counts,
        f1_local=local_f1(matches) if matches else 0.0,
        rmse_h=rmse_height(matches) if matches else None,
        per_bin=height_bin_report(gt_heights, matches, bin_height),
    )
