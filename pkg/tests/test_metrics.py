import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar_ora.errors import FormatError
from lidar_ora.geometry import BoundingBox3D
from lidar_ora.kitti_io import Calibration, RawLabel
from lidar_ora.metrics import (
    FP,
    IGNORED,
    TP,
    Detection,
    Difficulty,
    GroundTruth,
    assign_difficulty,
    average_precision,
    detections_from_labels,
    ground_truths_from_labels,
    interpolated_ap,
    kitti41_thresholds,
    match_detections,
    precision_recall_curve,
    recall_by_distance,
    recall_iou_curve,
    recall_within_range,
)
from oracles import tally_recall_by_bin


def _box(x, y=0.0, cls="Car", dims=(4.0, 2.0, 1.5), yaw=0.0):
    return BoundingBox3D((x, y, 0.0), dims, yaw, cls)


def _gt(x, y=0.0, difficulty=Difficulty.EASY, ignore=False):
    return GroundTruth(_box(x, y), difficulty, ignore)


def _det(x, score, y=0.0, bbox2d=None):
    return Detection(_box(x, y), score, "Car", bbox2d)


def _label(height_px=50.0, occ=0, trunc=0.0):
    return RawLabel("Car", trunc, occ, 0.0, (100.0, 100.0, 150.0, 100.0 + height_px), (1.5, 1.6, 3.9), (0.0, 1.6, 20.0), 0.0)


def _random_dataset(seed, n_frames=6):
    """Frames of well-separated GTs, jittered detections and clutter."""
    rng = np.random.default_rng(seed)
    gts, dets = [], []
    for _ in range(n_frames):
        fg, fd = [], []
        for k in range(int(rng.integers(0, 6))):
            x, y = 10.0 + 8.0 * k, rng.uniform(-10, 10)
            fg.append(GroundTruth(_box(x, y), Difficulty(int(rng.integers(0, 3))), bool(rng.random() < 0.1)))
            if rng.random() < 0.8:
                fd.append(Detection(_box(x + rng.normal(0, 0.4), y + rng.normal(0, 0.3)), float(rng.random()), "Car"))
        for _ in range(int(rng.integers(0, 3))):
            fd.append(Detection(_box(rng.uniform(5, 60), rng.uniform(15, 30)), float(rng.random()), "Car"))
        gts.append(fg)
        dets.append(fd)
    return dets, gts


def _brute_force_ap(scores, is_tp, num_gt, points):
    """For each recall point, scan every score cut-off and keep the best precision."""
    total = 0.0
    for r in points:
        best = 0.0
        for t in set(scores):
            keep = [tp for s, tp in zip(scores, is_tp) if s >= t]
            rec = sum(keep) / num_gt
            if rec >= r:
                best = max(best, sum(keep) / len(keep))
        total += best
    return 100.0 * total / len(points)


# -- difficulty -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "height, occ, trunc, expected",
    [
        (40.0, 0, 0.0, Difficulty.EASY),
        (50.0, 0, 0.15, Difficulty.EASY),
        (39.9, 0, 0.0, Difficulty.MODERATE),
        (50.0, 1, 0.0, Difficulty.MODERATE),
        (50.0, 0, 0.2, Difficulty.MODERATE),
        (25.0, 1, 0.3, Difficulty.MODERATE),
        (30.0, 2, 0.0, Difficulty.HARD),
        (50.0, 0, 0.45, Difficulty.HARD),
        (24.9, 0, 0.0, Difficulty.IGNORED),
        (50.0, 3, 0.0, Difficulty.IGNORED),
        (50.0, 0, 0.51, Difficulty.IGNORED),
    ],
)
def test_difficulty_levels(height, occ, trunc, expected):
    assert assign_difficulty(_label(height, occ, trunc)) is expected


def test_levels_nest():
    easy = GroundTruth(_box(10), Difficulty.EASY)
    hard = GroundTruth(_box(10), Difficulty.HARD)
    assert easy.counts_at(Difficulty.HARD) and easy.counts_at(Difficulty.MODERATE)
    assert not hard.counts_at(Difficulty.MODERATE)
    assert hard.counts_at(None)
    assert not GroundTruth(_box(10), Difficulty.EASY, ignore=True).counts_at(None)


# -- matching -----------------------------------------------------------------------------


def test_single_match():
    m = match_detections([_det(10, 0.9)], [_gt(10)], 0.7)
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_duplicate_detection_is_a_false_positive():
    m = match_detections([_det(10, 0.4), _det(10.1, 0.9)], [_gt(10)], 0.7)
    assert list(m.det_status) == [FP, TP]
    assert (m.tp, m.fp, m.fn) == (1, 1, 0)


def test_detection_on_ignored_ground_truth_is_neither():
    m = match_detections([_det(10, 0.9)], [_gt(10, ignore=True)], 0.7)
    assert list(m.det_status) == [IGNORED]
    assert (m.tp, m.fp, m.num_gt) == (0, 0, 0)


def test_detection_on_harder_ground_truth_is_neither():
    m = match_detections([_det(10, 0.9)], [_gt(10, difficulty=Difficulty.HARD)], 0.7, Difficulty.MODERATE)
    assert list(m.det_status) == [IGNORED]


def test_poor_overlap_gives_fp_and_fn():
    m = match_detections([_det(11.5, 0.9)], [_gt(10)], 0.7)
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)


def test_short_detections_are_ignored_at_that_level():
    det = _det(30, 0.9, bbox2d=(0, 0, 10, 30))
    assert list(match_detections([det], [], 0.7, Difficulty.EASY).det_status) == [IGNORED]
    assert list(match_detections([det], [], 0.7, Difficulty.MODERATE).det_status) == [FP]


def test_greedy_order_is_by_score():
    gts = [_gt(10), _gt(11.2)]
    dets = [_det(10.6, 0.2), _det(10.0, 0.9)]
    m = match_detections(dets, gts, 0.3)
    # the confident detection takes its best GT first
    assert m.det_to_gt[1] == 0
    assert m.det_to_gt[0] == 1


def test_neighbor_class_becomes_ignored_ground_truth():
    calib = Calibration.identity()
    row = lambda cls: RawLabel(cls, 0.0, 0, 0.0, (0, 0, 50, 80), (1.5, 1.6, 3.9), (0.0, 1.0, 20.0), 0.0)
    gts = ground_truths_from_labels([row("Car"), row("Van"), row("Truck")], calib, "Car")
    assert [g.ignore for g in gts] == [False, True]
    peds = ground_truths_from_labels([row("Person_sitting"), row("Pedestrian")], calib, "Pedestrian")
    assert [g.ignore for g in peds] == [True, False]
    assert ground_truths_from_labels([row("Van")], calib, "Cyclist") == []
    scored = lambda cls: replace(row(cls), score=0.3)
    dets = detections_from_labels([scored("Car"), scored("Van")], calib, "Car")
    assert [d.score for d in dets] == [0.3]
    with pytest.raises(FormatError):
        detections_from_labels([row("Car")], calib, "Car")


# -- precision / recall and AP ----------------------------------------------------------------


def test_pr_curve_groups_tied_scores():
    thr, rec, prec = precision_recall_curve([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 1], 4)
    np.testing.assert_array_equal(thr, [0.9, 0.5, 0.1])
    np.testing.assert_allclose(rec, [0.25, 0.5, 0.75])
    np.testing.assert_allclose(prec, [1.0, 2 / 3, 0.75])


def test_ap_fixtures():
    assert average_precision([[_det(10, 0.9)]], [[_gt(10)]], 0.7) == pytest.approx(100.0)
    # one of two objects found: recall 0.5 at precision 1
    half = average_precision([[_det(10, 0.9)], []], [[_gt(10)], [_gt(20)]], 0.7)
    assert half == pytest.approx(600 / 11, abs=1e-9)
    assert round(half, 2) == 54.55
    forty = average_precision([[_det(10, 0.9)], []], [[_gt(10)], [_gt(20)]], 0.7, interpolation="40-point")
    assert forty == pytest.approx(50.0)
    assert average_precision([[]], [[_gt(10)]], 0.7) == 0.0
    assert average_precision([[_det(10, 0.9)]], [[]], 0.7) is None
    assert average_precision([[_det(10, 0.9)]], [[_gt(10, ignore=True)]], 0.7) is None


def test_kitti41_credits_the_next_grid_point():
    dets, gts = [[_det(10, 0.9)], []], [[_gt(10)], [_gt(20)]]
    assert average_precision(dets, gts, 0.7, sampling="kitti41") == pytest.approx(100 / 11)
    np.testing.assert_array_equal(kitti41_thresholds([0.9], 2), [0.9])


@pytest.mark.parametrize("n, ap11, ap40", [(40, 1000 / 11, 97.5), (2, 100 / 11, 2.5)])
def test_kitti41_on_perfect_detections(n, ap11, ap40):
    # values produced by the reference devkit on the same input; exact sampling gives 100
    dets = [[_det(10.0 * k, 1.0 - 0.01 * k)] for k in range(1, n + 1)]
    gts = [[_gt(10.0 * k)] for k in range(1, n + 1)]
    assert average_precision(dets, gts, 0.7, sampling="kitti41") == pytest.approx(ap11)
    assert average_precision(dets, gts, 0.7, interpolation="40-point", sampling="kitti41") == pytest.approx(ap40)
    assert average_precision(dets, gts, 0.7) == pytest.approx(100.0)


def test_kitti41_threshold_count():
    scores = np.linspace(1, 0, 200, endpoint=False)
    assert kitti41_thresholds(scores, 200).size == 41
    np.testing.assert_array_equal(kitti41_thresholds(scores[:10], 200), [1.0, 0.98, 0.955])


def test_bad_options_rejected():
    with pytest.raises(ValueError):
        average_precision([], [], 0.7, interpolation="101-point")
    with pytest.raises(ValueError):
        average_precision([], [], 0.7, sampling="coco")
    with pytest.raises(ValueError):
        average_precision([[], []], [[_gt(1)], [], []], 0.7)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), max_size=25), st.integers(1, 30))
def test_interpolated_ap_matches_brute_force(rows, extra_gt):
    scores = [s / 20 for s, _ in rows]
    is_tp = [tp for _, tp in rows]
    num_gt = sum(is_tp) + extra_gt - 1 or 1
    _, rec, prec = precision_recall_curve(scores, is_tp, num_gt)
    for name, points in (("11-point", np.arange(11) / 10), ("40-point", np.arange(1, 41) / 40)):
        assert interpolated_ap(rec, prec, name) == pytest.approx(_brute_force_ap(scores, is_tp, num_gt, points), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_invariant_to_monotone_score_maps(seed):
    dets, gts = _random_dataset(seed)
    warped = [[Detection(d.box, math.exp(3 * d.score) - 7, d.class_name) for d in f] for f in dets]
    for interp in ("11-point", "40-point"):
        assert average_precision(dets, gts, 0.5, interpolation=interp) == average_precision(warped, gts, 0.5, interpolation=interp)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lowest_scored_false_positive_changes_nothing(seed):
    dets, gts = _random_dataset(seed)
    base = average_precision(dets, gts, 0.5, Difficulty.HARD)
    lowest = min([d.score for f in dets for d in f], default=1.0)
    dets[0] = dets[0] + [Detection(_box(500.0, 500.0), lowest - 1.0, "Car")]
    assert average_precision(dets, gts, 0.5, Difficulty.HARD) == base


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_repeating_the_dataset_keeps_ap(seed):
    dets, gts = _random_dataset(seed)
    for diff in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        assert average_precision(dets * 2, gts * 2, 0.5, diff) == pytest.approx(average_precision(dets, gts, 0.5, diff), abs=1e-9) or (
            average_precision(dets, gts, 0.5, diff) is None
        )


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_is_a_percentage_and_levels_are_ordered_by_count(seed):
    dets, gts = _random_dataset(seed)
    for diff in Difficulty:
        if diff is Difficulty.IGNORED:
            continue
        ap = average_precision(dets, gts, 0.5, diff)
        assert ap is None or 0.0 <= ap <= 100.0


# -- recall summaries --------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recall_does_not_grow_with_iou_threshold(seed):
    dets, gts = _random_dataset(seed)
    curve = recall_iou_curve(dets, gts, [0.1, 0.3, 0.5, 0.7, 0.9])
    vals = [r for _, r in curve]
    if vals[0] is None:
        assert all(v is None for v in vals)
    else:
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_recall_iou_thresholds_must_ascend():
    with pytest.raises(ValueError):
        recall_iou_curve([], [], [0.5, 0.3])


def test_recall_by_distance_matches_tally(rng):
    edges = [0, 10, 20, 30, 40]
    gts, dets, objects = [], [], []
    for _ in range(30):
        fg, fd = [], []
        for k in range(4):
            x = rng.uniform(3, 45)
            y = 6.0 * k - 9.0
            ignore = bool(rng.random() < 0.15)
            found = bool(rng.random() < 0.6)
            fg.append(GroundTruth(_box(x, y), Difficulty.EASY, ignore))
            if found:
                fd.append(Detection(_box(x, y), 0.5, "Car"))
            objects.append((math.hypot(x, y), not ignore, found))
        gts.append(fg)
        dets.append(fd)
    got = recall_by_distance(dets, gts, edges, 0.7)
    want = tally_recall_by_bin(objects, edges)
    assert got == pytest.approx(want)
    near = recall_within_range(dets, gts, 11.0, 0.7)
    far = recall_within_range(dets, gts, 11.0, 0.7, near=False)
    counted = [(r, d) for r, c, d in objects if c]
    assert near == pytest.approx(np.mean([d for r, d in counted if r <= 11.0]))
    assert far == pytest.approx(np.mean([d for r, d in counted if r > 11.0]))


def test_recall_by_distance_bins_validated_and_empty_bins_none():
    with pytest.raises(ValueError):
        recall_by_distance([], [], [10, 0], 0.5)
    assert recall_by_distance([[]], [[_gt(15)]], [0, 10, 20], 0.5) == [None, 0.0]
