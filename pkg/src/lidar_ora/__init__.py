"""Object removal attacks on LiDAR point clouds and KITTI-style evaluation."""

from .attack import AttackConfig, AttackTrace, attack_scene, build_attack_trace
from .geometry import BoundingBox3D, iou_3d, points_in_box
from .kitti_io import Calibration, PointCloud, RawLabel
from .metrics import Detection, Difficulty, GroundTruth, average_precision
from .proxy_detector import ProxyConfig, detect

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackTrace",
    "BoundingBox3D",
    "Calibration",
    "Detection",
    "Difficulty",
    "GroundTruth",
    "PointCloud",
    "ProxyConfig",
    "RawLabel",
    "attack_scene",
    "average_precision",
    "build_attack_trace",
    "detect",
    "iou_3d",
    "points_in_box",
]
