"""KITTI-style 3D detection evaluation and attribute-binned match analysis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .box_geom import bev_iou, box_from_label, iou_3d

EASY, MODERATE, HARD = "easy", "moderate", "hard"
LEVELS = (EASY, MODERATE, HARD)


@dataclass(frozen=True)
class DifficultyFilter:
    level: str
    min_bbox_height: float
    max_occlusion: int
    max_truncation: float

    def accepts(self, rec):
        return (
            rec.bbox_height >= self.min_bbox_height
            and rec.occlusion <= self.max_occlusion
            and rec.truncation <= self.max_truncation
        )


KITTI_DIFFICULTY = {
    EASY: DifficultyFilter(EASY, 40.0, 0, 0.15),
    MODERATE: DifficultyFilter(MODERATE, 25.0, 1, 0.30),
    HARD: DifficultyFilter(HARD, 25.0, 2, 0.50),
}


def difficulty_filters(overrides=None):
    """KITTI thresholds, optionally overridden by ``{level: {field: value}}``."""
    filters = dict(KITTI_DIFFICULTY)
    for level, vals in (overrides or {}).items():
        base = filters[level]
        filters[level] = DifficultyFilter(
            level,
            float(vals.get("min_bbox_height", base.min_bbox_height)),
            int(vals.get("max_occlusion", base.max_occlusion)),
            float(vals.get("max_truncation", base.max_truncation)),
        )
    return filters


def assign_difficulty(gt, filters=None):
    filters = filters or KITTI_DIFFICULTY
    return {level for level, f in filters.items() if f.accepts(gt)}


@dataclass
class DetectionFrame:
    frame_id: str
    gts: list
    preds: list

    def __post_init__(self):
        for p in self.preds:
            if p.score is None or not np.isfinite(p.score):
                raise ValueError(f"frame {self.frame_id}: predictions need finite scores")


@dataclass
class PrCurve:
    points: list = field(default_factory=list)  # (score_threshold, precision, recall)
    ap_r11: Optional[float] = None
    ap_r40: Optional[float] = None
    n_gt: int = 0

    def to_dict(self):
        return {
            "ap_r11": self.ap_r11,
            "ap_r40": self.ap_r40,
            "n_gt": self.n_gt,
            "points": [list(p) for p in self.points],
        }


R11 = [i / 10 for i in range(11)]
R40 = [i / 40 for i in range(1, 41)]
_RECALL_TOL = 1e-12


def _box_iou_fn(metric):
    if metric == "3d":
        return iou_3d
    if metric == "bev":
        return bev_iou
    raise ValueError(f"unknown metric {metric!r}")


def iou_2d(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def match_frame(frame, metric, iou_threshold, level_filter, category="Car", dontcare_iou=0.5):
    """Greedy matching of one frame.

    Returns ``(n_valid_gt, [(score, is_tp), ...])``; ignored predictions are
    left out. Predictions go in descending score order, each taking the
    unmatched in-level GT of largest IoU above the threshold.
    """
    iou_fn = _box_iou_fn(metric)
    valid_gt, ignored_gt, dontcare = [], [], []
    for g in frame.gts:
        if g.category == "DontCare":
            dontcare.append(g)
        elif g.category == category:
            (valid_gt if level_filter.accepts(g) else ignored_gt).append(box_from_label(g))
    preds = sorted((p for p in frame.preds if p.category == category),
                   key=lambda p: -p.score)

    matched = [False] * len(valid_gt)
    records = []
    for p in preds:
        pbox = box_from_label(p)
        best, best_iou = -1, iou_threshold
        for gi, g in enumerate(valid_gt):
            if matched[gi]:
                continue
            iou = iou_fn(pbox, g)
            if iou > best_iou:
                best, best_iou = gi, iou
        if best >= 0:
            matched[best] = True
            records.append((p.score, True))
            continue
        if any(iou_fn(pbox, g) > iou_threshold for g in ignored_gt):
            continue
        if any(iou_2d(p.bbox2d, d.bbox2d) >= dontcare_iou for d in dontcare):
            continue
        records.append((p.score, False))
    return len(valid_gt), records


def _interpolated_ap(precisions, recalls, sample_points):
    total = 0.0
    for r in sample_points:
        ok = recalls >= r - _RECALL_TOL
        total += float(precisions[ok].max()) if ok.any() else 0.0
    return total / len(sample_points)


def compute_ap(frames, metric="3d", iou_threshold=0.7, level=MODERATE, category="Car",
               filters=None):
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must be in (0, 1)")
    filters = filters or KITTI_DIFFICULTY
    n_gt = 0
    records = []
    for frame in frames:
        n, recs = match_frame(frame, metric, iou_threshold, filters[level], category)
        n_gt += n
        records.extend(recs)
    if n_gt == 0:
        return PrCurve(n_gt=0)

    records.sort(key=lambda r: -r[0])
    scores = np.array([r[0] for r in records])
    tp = np.cumsum([r[1] for r in records]) if records else np.zeros(0)
    points = []
    # Equal scores share one threshold, so only the last of a tie group counts.
    for i in range(len(records)):
        if i + 1 < len(records) and scores[i + 1] == scores[i]:
            continue
        n_det = i + 1
        points.append((float(scores[i]), float(tp[i] / n_det), float(tp[i] / n_gt)))
    prec = np.array([p[1] for p in points])
    rec = np.array([p[2] for p in points])
    return PrCurve(
        points=points,
        ap_r11=_interpolated_ap(prec, rec, R11),
        ap_r40=_interpolated_ap(prec, rec, R40),
        n_gt=n_gt,
    )


ATTRIBUTES = ("depth", "occlusion", "truncation")


def _attribute(rec, attribute):
    if attribute == "depth":
        return rec.location[2]
    if attribute == "occlusion":
        return rec.occlusion
    if attribute == "truncation":
        return rec.truncation
    raise ValueError(f"unknown attribute {attribute!r}")


@dataclass(frozen=True)
class BinRow:
    lo: float
    hi: float
    n_gt: int
    matched_count: int
    mean_iou: Optional[float]


def bin_analysis(frames, attribute, bins, match_iou=0.3, category="Car"):
    """Per-bin count of matched GTs and their mean best 3D IoU.

    Bins are half-open ``[edge_i, edge_{i+1})``.
    """
    edges = [float(b) for b in bins]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    n_bins = len(edges) - 1
    totals = [0] * n_bins
    ious = [[] for _ in range(n_bins)]
    for frame in frames:
        preds = [box_from_label(p) for p in frame.preds if p.category == category]
        for g in frame.gts:
            if g.category != category:
                continue
            value = _attribute(g, attribute)
            b = int(np.searchsorted(edges, value, side="right")) - 1
            if not 0 <= b < n_bins:
                continue
            totals[b] += 1
            gbox = box_from_label(g)
            best = max((iou_3d(gbox, p) for p in preds), default=0.0)
            if best > match_iou:
                ious[b].append(best)
    return [
        BinRow(edges[i], edges[i + 1], totals[i], len(ious[i]),
               float(np.mean(ious[i])) if ious[i] else None)
        for i in range(n_bins)
    ]
