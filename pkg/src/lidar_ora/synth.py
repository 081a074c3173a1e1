"""Synthetic KITTI-like scenes for desk-scale experiments.

Objects stand on a flat ground plane in front of the sensor. Each object
return is the first hit of a ray cast from the sensor towards a random point
of the box, so points cover the sensor-facing surfaces and stay strictly
inside the annotated box. Point counts fall off with range as
``points_at_10m * (10 / range) ** decay``.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import BoundingBox3D, bev_polygon, box_corners, camera_box_to_lidar, normalize_angle, points_in_box
from .kitti_io import (
    Calibration,
    KittiTree,
    PointCloud,
    RawLabel,
    format_calib_file,
    format_label_file,
    format_split_file,
    frame_name,
    parse_label_file,
    save_point_cloud,
)

SENSOR_HEIGHT = 1.73
IMAGE_SIZE = (1242, 375)

# mean (length, width, height) in metres
CLASS_DIMS = {
    "Car": (3.9, 1.6, 1.56),
    "Pedestrian": (0.8, 0.6, 1.75),
    "Cyclist": (1.76, 0.6, 1.73),
}
POINTS_AT_10M = {"Car": 1500.0, "Pedestrian": 250.0, "Cyclist": 300.0}


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the scene generator.

    ``count_range`` overrides the range-decay model with a uniform integer
    draw in ``[lo, hi]``. With ``separate_azimuths`` no two objects share a
    viewing direction, so no object hides behind another and points pushed
    back along a ray can never land in a second box.
    """

    num_frames: int = 20
    objects_per_frame: tuple[int, int] = (2, 6)
    classes: tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    range_m: tuple[float, float] = (5.0, 60.0)
    half_fov_deg: float = 38.0
    points_at_10m: dict = field(default_factory=lambda: dict(POINTS_AT_10M))
    decay: float = 2.0
    count_jitter: float = 0.15
    count_range: Optional[tuple[int, int]] = None
    min_object_points: int = 1
    ground_points: int = 1500
    separate_azimuths: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticFrame:
    frame_id: str
    cloud: PointCloud
    labels: list[RawLabel]
    boxes: list[BoundingBox3D]
    calib: Calibration


def _frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(index,))))


def _project_bbox2d(box: BoundingBox3D, calib: Calibration):
    corners = calib.lidar_to_rect(box_corners(box))
    if np.any(corners[:, 2] <= 0.1):
        return None, 1.0
    uv = calib.rect_to_image(corners)
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    full = (right - left) * (bottom - top)
    cl, ct = max(left, 0.0), max(top, 0.0)
    cr, cb = min(right, IMAGE_SIZE[0] - 1.0), min(bottom, IMAGE_SIZE[1] - 1.0)
    if cr - cl < 2.0 or cb - ct < 2.0:
        return None, 1.0
    truncation = 1.0 - (cr - cl) * (cb - ct) / full
    return (cl, ct, cr, cb), float(np.clip(truncation, 0.0, 1.0))


def _azimuth_span(box: BoundingBox3D, margin: float = math.radians(0.5)) -> tuple[float, float]:
    corners = bev_polygon(box)
    center_az = math.atan2(box.center[1], box.center[0])
    offsets = [normalize_angle(math.atan2(y, x) - center_az) for x, y in corners]
    return center_az + min(offsets) - margin, center_az + max(offsets) + margin


def _make_label(cls: str, center, dims, yaw, calib: Calibration, occlusion: int) -> Optional[RawLabel]:
    l, w, h = dims
    draft = BoundingBox3D(center, dims, yaw, cls)
    bbox2d, truncation = _project_bbox2d(draft, calib)
    if bbox2d is None or truncation > 0.5:
        return None
    bottom = np.asarray(center) - np.array([0.0, 0.0, h / 2.0])
    loc = calib.lidar_to_rect(bottom)[0]
    ry = normalize_angle(-yaw - math.pi / 2.0)
    alpha = normalize_angle(ry - math.atan2(loc[0], loc[2]))
    label = RawLabel(cls, truncation, occlusion, alpha, bbox2d, (h, w, l), tuple(loc), ry)
    # quantize through the text format so files and in-memory boxes agree
    return parse_label_file(format_label_file([label]))[0]


def _ray_box_entry(direction: np.ndarray, box: BoundingBox3D) -> np.ndarray:
    """Parametric entry/exit of rays from the origin through ``box`` (slab method)."""
    rot = box.rotation()
    origin_local = -np.asarray(box.center) @ rot
    dir_local = direction @ rot
    half = 0.5 * np.asarray(box.dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin_local) / dir_local
        t2 = (half - origin_local) / dir_local
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    return np.stack([t_near, t_far], axis=1)


def sample_object_points(box: BoundingBox3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` first-hit returns on ``box``, as an ``(n, 4)`` float32 array."""
    if n <= 0:
        return np.zeros((0, 4), dtype=np.float32)
    local = (rng.random((n, 3)) - 0.5) * 0.96 * np.asarray(box.dims)
    targets = local @ box.rotation().T + np.asarray(box.center)
    dirs = targets / np.linalg.norm(targets, axis=1, keepdims=True)
    span = _ray_box_entry(dirs, box)
    # a hair inside the entry face so float32 storage stays inside the box
    t = span[:, 0] + np.minimum(0.02, 0.25 * (span[:, 1] - span[:, 0]))
    xyz = dirs * t[:, None]
    refl = rng.uniform(0.05, 0.9, size=(n, 1))
    return np.hstack([xyz, refl]).astype(np.float32)


def _object_count(cls: str, rng_m: float, config: SynthConfig, rng: np.random.Generator) -> int:
    if config.count_range is not None:
        lo, hi = config.count_range
        return int(rng.integers(lo, hi + 1))
    mean = config.points_at_10m[cls] * (10.0 / rng_m) ** config.decay
    n = mean * math.exp(config.count_jitter * rng.standard_normal())
    return max(config.min_object_points, int(round(n)))


def generate_frame(index: int, config: SynthConfig, calib: Optional[Calibration] = None) -> SyntheticFrame:
    """Deterministically build frame ``index`` of the corpus described by ``config``."""
    calib = calib or Calibration.axis_aligned()
    rng = _frame_rng(config.seed, index)
    lo, hi = config.objects_per_frame
    want = int(rng.integers(lo, hi + 1))

    labels: list[RawLabel] = []
    boxes: list[BoundingBox3D] = []
    footprints: list[tuple[float, float, float]] = []
    spans: list[tuple[float, float]] = []
    attempts = 0
    while len(boxes) < want and attempts < 50 * max(want, 1):
        attempts += 1
        cls = config.classes[int(rng.integers(len(config.classes)))]
        mean_dims = np.asarray(CLASS_DIMS[cls])
        dims = tuple(mean_dims * rng.uniform(0.9, 1.1, size=3))
        r = rng.uniform(*config.range_m)
        az = math.radians(rng.uniform(-config.half_fov_deg, config.half_fov_deg))
        x, y = r * math.cos(az), r * math.sin(az)
        radius = 0.5 * math.hypot(dims[0], dims[1])
        if any(math.hypot(x - fx, y - fy) < radius + fr + 0.5 for fx, fy, fr in footprints):
            continue
        center = (x, y, -SENSOR_HEIGHT + dims[2] / 2.0)
        occlusion = int(rng.choice(3, p=[0.6, 0.3, 0.1]))
        label = _make_label(cls, center, dims, rng.uniform(-math.pi, math.pi), calib, occlusion)
        if label is None:
            continue
        box = camera_box_to_lidar(label, calib)
        span = _azimuth_span(box)
        if config.separate_azimuths and any(span[0] < s_hi and s_lo < span[1] for s_lo, s_hi in spans):
            continue
        labels.append(label)
        boxes.append(box)
        footprints.append((x, y, radius))
        spans.append(span)

    parts = []
    for box in boxes:
        n = _object_count(box.class_name, box.horizontal_range, config, rng)
        parts.append(sample_object_points(box, n, rng))

    if config.ground_points:
        gr = np.sqrt(rng.uniform(3.0**2, 70.0**2, size=config.ground_points))
        gaz = np.radians(rng.uniform(-60.0, 60.0, size=config.ground_points))
        gz = -SENSOR_HEIGHT - np.abs(rng.normal(0.0, 0.02, size=config.ground_points)) - 0.01
        ground = np.column_stack([gr * np.cos(gaz), gr * np.sin(gaz), gz, rng.uniform(0.0, 0.3, config.ground_points)])
        ground = ground.astype(np.float32)
        keep = np.ones(len(ground), dtype=bool)
        for box in boxes:
            keep[points_in_box(ground, box)] = False
        parts.append(ground[keep])

    points = np.vstack(parts) if parts else np.zeros((0, 4), dtype=np.float32)
    return SyntheticFrame(frame_name(index), PointCloud(points.astype(np.float32)), labels, boxes, calib)


def generate_corpus(config: SynthConfig):
    """Yield every frame of the corpus in order."""
    for i in range(config.num_frames):
        yield generate_frame(i, config)


def write_corpus(root: str | os.PathLike, config: SynthConfig, split: str = "val") -> list[str]:
    """Write the corpus as a KITTI tree and return its frame ids."""
    ids = [write_frame(root, frame) for frame in generate_corpus(config)]
    write_split(root, ids, split)
    return ids


def write_frame(root: str | os.PathLike, frame: SyntheticFrame) -> str:
    """Write the velodyne, label and calib files of one frame."""
    tree = KittiTree(root)
    save_point_cloud(tree.velodyne(frame.frame_id), frame.cloud)
    for path, text in (
        (tree.label(frame.frame_id), format_label_file(frame.labels)),
        (tree.calib(frame.frame_id), format_calib_file(frame.calib)),
    ):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return frame.frame_id


def write_split(root: str | os.PathLike, frame_ids, split: str = "val") -> Path:
    path = KittiTree(root).split(split)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_split_file(frame_ids))
    return path
