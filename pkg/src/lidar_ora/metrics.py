"""KITTI-style detection metrics: difficulty, matching, AP, recall curves.

Ground truth and detections are passed per frame, as parallel sequences of
per-frame lists. A single frame may also be passed directly as a flat list.
Matching is done per frame and statistics are pooled across frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError
from .geometry import BoundingBox3D, camera_box_to_lidar, iou_3d
from .kitti_io import Calibration, RawLabel

MIN_HEIGHT = (40.0, 25.0, 25.0)
MAX_OCCLUSION = (0, 1, 2)
MAX_TRUNCATION = (0.15, 0.30, 0.50)

DEFAULT_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
# ground truth of these classes neither counts as a miss nor makes a detection false
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}

INTERPOLATIONS = ("11-point", "40-point")
# "exact" uses every operating point of the PR curve; "kitti41" reproduces the
# official evaluator's 41 score thresholds picked from true-positive scores
SAMPLINGS = ("exact", "kitti41")

TP, FP, IGNORED = 1, 0, -1


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


def assign_difficulty(label: RawLabel) -> Difficulty:
    """Hardest-passing KITTI level for a label, from its stored 2D box.

    Levels nest: an Easy object is also evaluated at Moderate and Hard.
    """
    height = label.height_px
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if (
            height >= MIN_HEIGHT[level]
            and label.occlusion <= MAX_OCCLUSION[level]
            and label.truncation <= MAX_TRUNCATION[level]
        ):
            return level
    return Difficulty.IGNORED


@dataclass(frozen=True)
class Detection:
    box: BoundingBox3D
    score: float
    class_name: str = ""
    bbox2d: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")
        if not self.class_name:
            object.__setattr__(self, "class_name", self.box.class_name)


@dataclass(frozen=True)
class GroundTruth:
    """An annotated object.

    ``ignore`` marks objects that may absorb a detection without being
    counted as missed, e.g. a Van while evaluating Car.
    """

    box: BoundingBox3D
    difficulty: Difficulty = Difficulty.EASY
    ignore: bool = False

    def counts_at(self, difficulty: Optional[Difficulty]) -> bool:
        if self.ignore:
            return False
        if difficulty is None:
            return True
        return self.difficulty <= difficulty


@lru_cache(maxsize=1 << 18)
def _cached_iou(a: BoundingBox3D, b: BoundingBox3D) -> float:
    return iou_3d(a, b)


@dataclass
class Matching:
    """Per-frame outcome of :func:`match_detections`.

    ``det_status`` holds ``TP``/``FP``/``IGNORED`` per input detection and
    ``det_to_gt`` the matched ground-truth index (``-1`` if none).
    """

    det_status: np.ndarray
    det_scores: np.ndarray
    det_to_gt: np.ndarray
    gt_valid: np.ndarray
    gt_matched: np.ndarray

    @property
    def tp(self) -> int:
        return int(np.sum(self.det_status == TP))

    @property
    def fp(self) -> int:
        return int(np.sum(self.det_status == FP))

    @property
    def num_gt(self) -> int:
        return int(self.gt_valid.sum())

    @property
    def fn(self) -> int:
        return int(np.sum(self.gt_valid & ~self.gt_matched))


def _drop_small(det: Detection, difficulty: Optional[Difficulty]) -> bool:
    if det.bbox2d is None or difficulty is None or difficulty == Difficulty.IGNORED:
        return False
    return abs(det.bbox2d[3] - det.bbox2d[1]) < MIN_HEIGHT[difficulty]


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
    difficulty: Optional[Difficulty] = Difficulty.HARD,
) -> Matching:
    """Greedy one-to-one matching of a single frame and class.

    Detections are visited by descending score (ties keep input order). Each
    takes the free counted ground truth of highest IoU ``>= iou_threshold``;
    failing that, a free ignored ground truth makes it ``IGNORED``; otherwise
    it is ``FP``. Ground truth harder than ``difficulty`` is ignored
    (``difficulty=None`` counts every non-ignore object). Detections whose
    2D box is shorter than the level's minimum height are ``IGNORED``.
    """
    n_det, n_gt = len(dets), len(gts)
    status = np.full(n_det, FP, dtype=np.int64)
    det_to_gt = np.full(n_det, -1, dtype=np.int64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    valid = np.array([g.counts_at(difficulty) for g in gts], dtype=bool)
    taken = np.zeros(n_gt, dtype=bool)

    order = np.argsort(-scores, kind="stable")
    for j in order:
        det = dets[j]
        if _drop_small(det, difficulty):
            status[j] = IGNORED
            continue
        best, best_iou, best_ignored, best_ignored_iou = -1, -1.0, -1, -1.0
        for i in range(n_gt):
            if taken[i]:
                continue
            iou = _cached_iou(det.box, gts[i].box)
            if iou < iou_threshold or iou <= 0.0:
                continue
            if valid[i]:
                if iou > best_iou:
                    best, best_iou = i, iou
            elif iou > best_ignored_iou:
                best_ignored, best_ignored_iou = i, iou
        if best >= 0:
            status[j] = TP
            det_to_gt[j] = best
            taken[best] = True
        elif best_ignored >= 0:
            status[j] = IGNORED
            det_to_gt[j] = best_ignored
            taken[best_ignored] = True

    matched = np.zeros(n_gt, dtype=bool)
    matched[det_to_gt[status == TP]] = True
    return Matching(status, scores, det_to_gt, valid, matched)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def _as_frames(items) -> list:
    items = list(items)
    if not items or isinstance(items[0], (Detection, GroundTruth)):
        return [items]
    return [list(frame) for frame in items]


def _frames(dets, gts) -> list[tuple[list, list]]:
    det_frames, gt_frames = _as_frames(dets), _as_frames(gts)
    if len(det_frames) == 1 and not det_frames[0] and len(gt_frames) > 1:
        det_frames = [[] for _ in gt_frames]
    if len(gt_frames) == 1 and not gt_frames[0] and len(det_frames) > 1:
        gt_frames = [[] for _ in det_frames]
    if len(det_frames) != len(gt_frames):
        raise ValueError(
            f"got detections for {len(det_frames)} frames but ground truth for {len(gt_frames)}"
        )
    return list(zip(det_frames, gt_frames))


def match_frames(dets, gts, iou_threshold: float, difficulty=Difficulty.HARD) -> list[Matching]:
    return [match_detections(d, g, iou_threshold, difficulty) for d, g in _frames(dets, gts)]


def precision_recall_curve(scores, is_tp, num_gt: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact PR curve with one operating point per distinct score.

    Returns:
        ``(thresholds, recall, precision)``, thresholds descending.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.size == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    order = np.argsort(-scores, kind="stable")
    scores, is_tp = scores[order], is_tp[order]
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    # last index of each run of equal scores
    ends = np.append(np.flatnonzero(np.diff(scores) != 0), scores.size - 1)
    tp, fp = tp[ends], fp[ends]
    return scores[ends], tp / num_gt, tp / (tp + fp)


def _recall_points(interpolation: str) -> np.ndarray:
    if interpolation == "11-point":
        return np.arange(11) / 10
    if interpolation == "40-point":
        return np.arange(1, 41) / 40
    raise ValueError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")


def interpolated_ap(recall: np.ndarray, precision: np.ndarray, interpolation: str = "11-point") -> float:
    """Mean over the sampling recalls of the best precision at recall >= r, in percent."""
    points = _recall_points(interpolation)
    total = 0.0
    for r in points:
        mask = recall >= r
        total += float(precision[mask].max()) if mask.any() else 0.0
    return 100.0 * total / points.size


def kitti41_thresholds(tp_scores, num_gt: int, num_points: int = 41) -> np.ndarray:
    """Score thresholds sampled the way the official KITTI evaluator does.

    True-positive scores are walked in descending order and one is kept each
    time recall gets closest to the next multiple of ``1 / (num_points - 1)``.
    The lowest true-positive score is always kept, so the final sample is
    credited to the next grid recall even when recall stops short of it.
    """
    scores = np.sort(np.asarray(tp_scores, dtype=np.float64))[::-1]
    step = 1.0 / (num_points - 1)
    current = 0.0
    kept = []
    for i, score in enumerate(scores):
        last = i == scores.size - 1
        left = (i + 1) / num_gt
        right = left if last else (i + 2) / num_gt
        if not last and (right - current) < (current - left):
            continue
        kept.append(score)
        current += step
    return np.asarray(kept[:num_points])


def kitti41_ap(scores, is_tp, num_gt: int, interpolation: str = "11-point") -> float:
    """AP from precision at the :func:`kitti41_thresholds` samples, in percent.

    Sample ``i`` stands for recall ``i / 40``; precision is made monotone from
    the right before the 11-point (every fourth sample) or 40-point (samples
    1..40) average is taken.
    """
    _recall_points(interpolation)
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    thresholds = kitti41_thresholds(scores[is_tp], num_gt)
    precision = np.zeros(41)
    for i, t in enumerate(thresholds):
        keep = scores >= t
        precision[i] = is_tp[keep].sum() / keep.sum()
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "11-point":
        return 100.0 * precision[::4].sum() / 11
    return 100.0 * precision[1:].sum() / 40


def average_precision(
    dets,
    gts,
    iou_threshold: float,
    difficulty: Optional[Difficulty] = Difficulty.MODERATE,
    interpolation: str = "11-point",
    sampling: str = "exact",
) -> Optional[float]:
    """Pooled AP (percent) of one class; ``None`` when no ground truth counts.

    ``sampling="exact"`` interpolates the full PR curve. ``"kitti41"`` follows
    the official evaluator's coarser threshold sampling, which can credit a
    recall level the detector never reaches (see :func:`kitti41_thresholds`).
    """
    _recall_points(interpolation)
    if sampling not in SAMPLINGS:
        raise ValueError(f"sampling must be one of {SAMPLINGS}, got {sampling!r}")
    matchings = match_frames(dets, gts, iou_threshold, difficulty)
    num_gt = sum(m.num_gt for m in matchings)
    if num_gt == 0:
        return None
    scores = np.concatenate([m.det_scores[m.det_status != IGNORED] for m in matchings] + [np.zeros(0)])
    is_tp = np.concatenate([m.det_status[m.det_status != IGNORED] == TP for m in matchings] + [np.zeros(0, bool)])
    if sampling == "kitti41":
        return kitti41_ap(scores, is_tp, num_gt, interpolation)
    _, recall, precision = precision_recall_curve(scores, is_tp, num_gt)
    return interpolated_ap(recall, precision, interpolation)


def recall_iou_curve(
    dets,
    gts,
    thresholds: Sequence[float],
    difficulty: Optional[Difficulty] = None,
) -> list[tuple[float, Optional[float]]]:
    """Recall at each IoU threshold (all detections kept, whatever their score)."""
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    curve = []
    for thr in thresholds:
        matchings = match_frames(dets, gts, thr, difficulty)
        num_gt = sum(m.num_gt for m in matchings)
        tp = sum(m.tp for m in matchings)
        curve.append((thr, tp / num_gt if num_gt else None))
    return curve


def recall_by_distance(
    dets,
    gts,
    bin_edges: Sequence[float],
    iou_threshold: float,
    difficulty: Optional[Difficulty] = None,
) -> list[Optional[float]]:
    """Recall per horizontal-range bin ``[edge_i, edge_i+1)``; empty bins give ``None``."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly ascending with at least two entries")
    hits = np.zeros(edges.size - 1)
    totals = np.zeros(edges.size - 1)
    for (_, frame_gts), m in zip(_frames(dets, gts), match_frames(dets, gts, iou_threshold, difficulty)):
        for i, gt in enumerate(frame_gts):
            if not m.gt_valid[i]:
                continue
            k = np.searchsorted(edges, gt.box.horizontal_range, side="right") - 1
            if 0 <= k < edges.size - 1:
                totals[k] += 1
                hits[k] += m.gt_matched[i]
    return [float(h / t) if t else None for h, t in zip(hits, totals)]


def recall_within_range(
    dets,
    gts,
    max_range: float,
    iou_threshold: float,
    difficulty: Optional[Difficulty] = None,
    near: bool = True,
) -> Optional[float]:
    """Recall over objects with horizontal range ``<= max_range`` (or ``>`` when ``near=False``)."""
    hits = total = 0
    for (_, frame_gts), m in zip(_frames(dets, gts), match_frames(dets, gts, iou_threshold, difficulty)):
        for i, gt in enumerate(frame_gts):
            if m.gt_valid[i] and ((gt.box.horizontal_range <= max_range) == near):
                total += 1
                hits += bool(m.gt_matched[i])
    return hits / total if total else None


# ---------------------------------------------------------------------------
# From KITTI rows
# ---------------------------------------------------------------------------


def ground_truths_from_labels(
    labels: Sequence[RawLabel], calib: Calibration, class_name: str
) -> list[GroundTruth]:
    """Ground truth of ``class_name`` plus its neighbor class as ignored objects."""
    neighbors = NEIGHBOR_CLASSES.get(class_name, ())
    out = []
    for lab in labels:
        if lab.class_name == class_name:
            out.append(GroundTruth(camera_box_to_lidar(lab, calib), assign_difficulty(lab)))
        elif lab.class_name in neighbors:
            out.append(GroundTruth(camera_box_to_lidar(lab, calib), assign_difficulty(lab), ignore=True))
    return out


def detections_from_labels(
    labels: Sequence[RawLabel], calib: Calibration, class_name: str
) -> list[Detection]:
    out = []
    for lab in labels:
        if lab.class_name != class_name:
            continue
        if lab.score is None:
            raise FormatError(f"{class_name} detection row has no score column")
        out.append(Detection(camera_box_to_lidar(lab, calib), float(lab.score), lab.class_name, lab.bbox2d))
    return out
