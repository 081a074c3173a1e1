"""Point-count stand-in for a learned 3D detector.

The proxy is given candidate boxes (normally the ground truth) and only
decides whether each one is detected: a box is reported when it still holds
at least ``min_points`` returns. It isolates the removal mechanism (points
leaving the object's box) and says nothing about how a trained network
would score the same cloud.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import BoundingBox3D, points_in_box
from .kitti_io import PointCloud
from .metrics import Detection


@dataclass(frozen=True)
class ProxyConfig:
    min_points: int = 20
    score_scale: float = 100.0

    def __post_init__(self):
        if int(self.min_points) != self.min_points or self.min_points < 1:
            raise ConfigError("min_points must be an integer >= 1")
        if not self.score_scale > 0:
            raise ConfigError("score_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def count_points(cloud: PointCloud, boxes: Sequence[BoundingBox3D]) -> np.ndarray:
    return np.array([points_in_box(cloud, box).size for box in boxes], dtype=np.int64)


def detect(
    cloud: PointCloud,
    candidate_boxes: Sequence[BoundingBox3D],
    config: ProxyConfig,
    bboxes2d: Optional[Sequence] = None,
) -> list[Detection]:
    """Report each candidate holding ``n >= min_points`` points, scored ``min(1, n / score_scale)``.

    Boxes are echoed unchanged. ``bboxes2d``, when given, is copied onto the
    matching detections so they can be written back as KITTI rows.
    """
    counts = count_points(cloud, candidate_boxes)
    out = []
    for i, (box, n) in enumerate(zip(candidate_boxes, counts)):
        if n < config.min_points:
            continue
        out.append(
            Detection(
                box=box,
                score=min(1.0, n / config.score_scale),
                class_name=box.class_name,
                bbox2d=None if bboxes2d is None else tuple(bboxes2d[i]),
            )
        )
    return out
