"""Dataset-level evaluation and report emission (JSON + plottable CSV)."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .kitti_io import Calibration, RawLabel
from .metrics import (
    DEFAULT_IOU,
    INTERPOLATIONS,
    SAMPLINGS,
    Difficulty,
    average_precision,
    detections_from_labels,
    ground_truths_from_labels,
    recall_by_distance,
    recall_iou_curve,
    recall_within_range,
)

REPORT_SCHEMA_VERSION = "1.0"

DIFFICULTY_NAMES = {"easy": Difficulty.EASY, "moderate": Difficulty.MODERATE, "hard": Difficulty.HARD}
# recall tables are emitted both over every object and over the Moderate subset
RECALL_MODES = {"all": None, "moderate": Difficulty.MODERATE}


@dataclass
class EvalOptions:
    interpolation: str = "11-point"
    sampling: str = "exact"
    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_IOU))
    recall_iou_thresholds: list = field(default_factory=lambda: [round(0.1 * i, 2) for i in range(1, 10)])
    distance_bins: list = field(default_factory=lambda: [float(v) for v in range(0, 80, 10)])
    front_near_range: float = 11.0

    def __post_init__(self):
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")
        self.recall_iou_thresholds = [float(t) for t in self.recall_iou_thresholds]
        self.distance_bins = [float(v) for v in self.distance_bins]
        if sorted(self.recall_iou_thresholds) != self.recall_iou_thresholds:
            raise ValueError("recall_iou_thresholds must be ascending")
        if np.any(np.diff(self.distance_bins) <= 0):
            raise ValueError("distance_bins must be strictly ascending")

    def iou_for(self, class_name: str) -> float:
        return float(self.iou_thresholds.get(class_name, 0.5))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GtFrame:
    frame_id: str
    labels: list[RawLabel]
    calib: Calibration


@dataclass
class EvaluationReport:
    """Tables keyed by class, difficulty/mode and attack budget.

    AP values are percentages; recalls are fractions in ``[0, 1]``; ``None``
    marks a cell without ground truth.
    """

    options: EvalOptions
    ap_table: dict = field(default_factory=dict)
    recall_iou_curves: dict = field(default_factory=dict)
    recall_by_distance: dict = field(default_factory=dict)
    front_near: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)

    @property
    def budgets(self) -> list:
        return sorted({k[2] for k in self.ap_table})

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "options": self.options.to_dict(),
            "ap_table": [
                {"class": c, "difficulty": d, "budget": b, "ap": v}
                for (c, d, b), v in sorted(self.ap_table.items())
            ],
            "recall_iou_curves": [
                {"class": c, "mode": m, "budget": b, "curve": [[t, r] for t, r in v]}
                for (c, m, b), v in sorted(self.recall_iou_curves.items())
            ],
            "recall_by_distance": [
                {"class": c, "mode": m, "budget": b, "recalls": v}
                for (c, m, b), v in sorted(self.recall_by_distance.items())
            ],
            "front_near": [
                {"class": c, "mode": m, "budget": b, **v}
                for (c, m, b), v in sorted(self.front_near.items())
            ],
            "recall": [
                {"class": c, "mode": m, "budget": b, "recall": v}
                for (c, m, b), v in sorted(self.recall.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError("unsupported report schema")
        rep = cls(EvalOptions(**d["options"]))
        for row in d["ap_table"]:
            rep.ap_table[(row["class"], row["difficulty"], row["budget"])] = row["ap"]
        for row in d["recall_iou_curves"]:
            rep.recall_iou_curves[(row["class"], row["mode"], row["budget"])] = [tuple(p) for p in row["curve"]]
        for row in d["recall_by_distance"]:
            rep.recall_by_distance[(row["class"], row["mode"], row["budget"])] = row["recalls"]
        for row in d["front_near"]:
            rep.front_near[(row["class"], row["mode"], row["budget"])] = {
                k: row[k] for k in ("near", "far", "max_range")
            }
        for row in d["recall"]:
            rep.recall[(row["class"], row["mode"], row["budget"])] = row["recall"]
        return rep

    def write(self, out_dir: str | os.PathLike) -> list[Path]:
        """Emit ``report.json``, ``ap_table.{json,csv}`` and the recall CSVs.

        The recall CSVs are ``recall_iou.csv``, ``recall_by_distance.csv`` and
        ``recall_vs_budget.csv``.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        full = self.to_dict()
        written = [out / "report.json", out / "ap_table.json"]
        written[0].write_text(json.dumps(full, indent=1) + "\n")
        written[1].write_text(json.dumps(full["ap_table"], indent=1) + "\n")

        rows = [
            [c, d, b, self.options.iou_for(c), self.options.interpolation, self.options.sampling, _cell(v)]
            for (c, d, b), v in sorted(self.ap_table.items())
        ]
        written.append(_write_csv(out / "ap_table.csv", ["class", "difficulty", "budget", "iou_threshold", "interpolation", "sampling", "ap"], rows))

        rows = [
            [c, m, b, t, _cell(r)]
            for (c, m, b), curve in sorted(self.recall_iou_curves.items())
            for t, r in curve
        ]
        written.append(_write_csv(out / "recall_iou.csv", ["class", "mode", "budget", "iou_threshold", "recall"], rows))

        edges = self.options.distance_bins
        rows = []
        for (c, m, b), recalls in sorted(self.recall_by_distance.items()):
            for lo, hi, r in zip(edges[:-1], edges[1:], recalls):
                rows.append([c, m, b, self.options.iou_for(c), "bin", lo, hi, _cell(r)])
            fn = self.front_near.get((c, m, b))
            if fn is not None:
                rows.append([c, m, b, self.options.iou_for(c), "front_near", 0.0, fn["max_range"], _cell(fn["near"])])
                rows.append([c, m, b, self.options.iou_for(c), "beyond_front_near", fn["max_range"], "", _cell(fn["far"])])
        written.append(
            _write_csv(
                out / "recall_by_distance.csv",
                ["class", "mode", "budget", "iou_threshold", "kind", "range_lo", "range_hi", "recall"],
                rows,
            )
        )

        rows = [[c, m, b, self.options.iou_for(c), _cell(r)] for (c, m, b), r in sorted(self.recall.items())]
        written.append(_write_csv(out / "recall_vs_budget.csv", ["class", "mode", "budget", "iou_threshold", "recall"], rows))
        return written


def _cell(v):
    return "" if v is None else v


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv_table(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_report(path: str | os.PathLike) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text()))


def evaluate_dataset(
    gt_frames: Sequence[GtFrame],
    det_frames: Sequence[Sequence[RawLabel]],
    classes: Sequence[str],
    options: EvalOptions,
    budget: int = 0,
    report: Optional[EvaluationReport] = None,
) -> EvaluationReport:
    """Add one budget's worth of tables to ``report`` (a new one by default).

    ``det_frames[i]`` are detection rows (with scores) for ``gt_frames[i]``.
    """
    if len(gt_frames) != len(det_frames):
        raise ValueError("need one detection list per ground-truth frame")
    report = report or EvaluationReport(options)
    for cls in classes:
        gts = [ground_truths_from_labels(f.labels, f.calib, cls) for f in gt_frames]
        dets = [detections_from_labels(d, f.calib, cls) for d, f in zip(det_frames, gt_frames)]
        thr = options.iou_for(cls)
        for name, level in DIFFICULTY_NAMES.items():
            report.ap_table[(cls, name, budget)] = average_precision(
                dets, gts, thr, level, options.interpolation, options.sampling
            )
        for mode, level in RECALL_MODES.items():
            key = (cls, mode, budget)
            report.recall[key] = recall_iou_curve(dets, gts, [thr], level)[0][1]
            report.recall_iou_curves[key] = recall_iou_curve(dets, gts, options.recall_iou_thresholds, level)
            report.recall_by_distance[key] = recall_by_distance(dets, gts, options.distance_bins, thr, level)
            report.front_near[key] = {
                "max_range": options.front_near_range,
                "near": recall_within_range(dets, gts, options.front_near_range, thr, level, near=True),
                "far": recall_within_range(dets, gts, options.front_near_range, thr, level, near=False),
            }
    return report
