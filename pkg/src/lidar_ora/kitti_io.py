"""Readers and writers for KITTI object-detection artifacts.

Covers the four file kinds a KITTI-style tree holds:

* ``velodyne/<frame>.bin``  raw little-endian float32 ``(x, y, z, reflectance)`` records
* ``label_2/<frame>.txt``   one object per line, 15 whitespace-separated fields
  (16 for detection results, the last one being the confidence score)
* ``calib/<frame>.txt``     ``KEY: v1 v2 ...`` lines
* ``ImageSets/<split>.txt`` newline-separated frame ids

Every parser either returns a value or raises :class:`~lidar_ora.errors.FormatError`
/ :class:`~lidar_ora.errors.DataError`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

POINT_RECORD_BYTES = 16
_POINT_DTYPE = np.dtype("<f4")

DONTCARE = "DontCare"

CALIB_DET_TOL = 1e-6

# KITTI raw/tracking calibs spell two of the keys differently.
_CALIB_KEYS = {
    "P2": ("P2",),
    "R0_rect": ("R0_rect", "R_rect"),
    "Tr_velo_to_cam": ("Tr_velo_to_cam", "Tr_velo_cam"),
}


def frame_name(frame_id: int | str) -> str:
    """Zero-pad a frame id to the 6-digit KITTI convention."""
    if isinstance(frame_id, str):
        if not (frame_id.isascii() and frame_id.isdigit()):
            raise FormatError(f"frame id {frame_id!r} is not numeric")
        frame_id = int(frame_id)
    if frame_id < 0:
        raise FormatError(f"frame id {frame_id} is negative")
    return f"{frame_id:06d}"


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


class PointCloud:
    """Ordered LiDAR returns in the sensor frame (x forward, y left, z up).

    ``points`` is an ``(N, 4)`` array of ``x, y, z, reflectance``. Clouds read
    from disk keep their float32 values; attacked clouds are float64 so that
    displaced points keep their exact ray direction in memory.
    """

    __slots__ = ("points",)

    def __init__(self, points: np.ndarray):
        points = np.asarray(points)
        if points.ndim != 2 or points.shape[1] != 4:
            raise DataError(f"point array must have shape (N, 4), got {points.shape}")
        if points.dtype.kind != "f":
            points = points.astype(np.float64)
        if not np.all(np.isfinite(points)):
            bad = int(np.flatnonzero(~np.isfinite(points).all(axis=1))[0])
            raise DataError(f"point {bad} has a non-finite coordinate")
        refl = points[:, 3]
        if refl.size and (refl.min() < 0.0 or refl.max() > 1.0):
            raise DataError("reflectance must lie in [0, 1]")
        if points.flags.writeable:
            points = points.copy()
            points.setflags(write=False)
        self.points = points

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4), dtype=np.float32))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectance(self) -> np.ndarray:
        return self.points[:, 3]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, dtype={self.points.dtype})"


def parse_point_cloud(data: bytes) -> PointCloud:
    """Decode a KITTI velodyne binary blob.

    Reflectance values slightly outside ``[0, 1]`` occur in real recordings;
    they are clamped and a warning is logged.

    Raises:
        FormatError: byte length is not a multiple of 16.
        DataError: a record holds NaN or infinity.
    """
    data = bytes(data)
    if len(data) % POINT_RECORD_BYTES:
        raise FormatError(
            f"point cloud length {len(data)} is not a multiple of {POINT_RECORD_BYTES}"
        )
    raw = np.frombuffer(data, dtype=_POINT_DTYPE).reshape(-1, 4)
    finite = np.isfinite(raw).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DataError(f"record {bad} contains a non-finite value")
    points = raw.astype(np.float32, copy=True)
    refl = points[:, 3]
    out_of_range = (refl < 0.0) | (refl > 1.0)
    if out_of_range.any():
        logger.warning(
            "clamping %d reflectance value(s) outside [0, 1]", int(out_of_range.sum())
        )
        np.clip(refl, 0.0, 1.0, out=refl)
    return PointCloud(points)


def write_point_cloud(cloud: PointCloud) -> bytes:
    """Encode a cloud as KITTI velodyne bytes (little-endian float32, no header)."""
    return np.ascontiguousarray(cloud.points, dtype=_POINT_DTYPE).tobytes()


def read_point_cloud(path: str | os.PathLike) -> PointCloud:
    return parse_point_cloud(Path(path).read_bytes())


def save_point_cloud(path: str | os.PathLike, cloud: PointCloud) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_point_cloud(cloud))


# ---------------------------------------------------------------------------
# Labels and detections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawLabel:
    """One row of a KITTI label or detection file, in camera-rectified coordinates.

    ``location`` is the bottom-face center of the box; ``dimensions`` are
    ``(height, width, length)``.
    """

    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dimensions: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONTCARE

    @property
    def height_px(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    def with_score(self, score: float) -> "RawLabel":
        return replace(self, score=float(score))


def _to_float(token: str, lineno: int, field: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"line {lineno}: {field} {token!r} is not a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: {field} is not finite")
    return value


def _parse_label_line(fields: list[str], lineno: int, has_score: bool) -> RawLabel:
    nums = [_to_float(tok, lineno, f"field {i + 2}") for i, tok in enumerate(fields[1:])]
    occl = nums[1]
    if occl != int(occl):
        raise DataError(f"line {lineno}: occlusion {occl} is not an integer")
    label = RawLabel(
        class_name=fields[0],
        truncation=nums[0],
        occlusion=int(occl),
        alpha=nums[2],
        bbox2d=(nums[3], nums[4], nums[5], nums[6]),
        dimensions=(nums[7], nums[8], nums[9]),
        location=(nums[10], nums[11], nums[12]),
        rotation_y=nums[13],
        score=nums[14] if has_score else None,
    )
    if label.is_dontcare:
        return label
    if min(label.dimensions) <= 0.0:
        raise DataError(f"line {lineno}: dimensions must be strictly positive")
    if has_score:
        # detector outputs often carry placeholder 2D boxes / truncation / occlusion
        return label
    left, top, right, bottom = label.bbox2d
    if not (left < right and top < bottom):
        raise DataError(f"line {lineno}: degenerate 2D box {label.bbox2d}")
    if label.occlusion not in (0, 1, 2, 3):
        raise DataError(f"line {lineno}: occlusion must be in {{0,1,2,3}}")
    if not 0.0 <= label.truncation <= 1.0:
        raise DataError(f"line {lineno}: truncation must be in [0, 1]")
    return label


def parse_label_file(text: str, has_score: bool = False) -> list[RawLabel]:
    """Parse a KITTI label (15 fields) or detection-result (16 fields) file.

    Blank lines are skipped; every other line yields exactly one
    :class:`RawLabel`, ``DontCare`` rows included.
    """
    expected = 16 if has_score else 15
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != expected:
            raise FormatError(
                f"line {lineno}: expected {expected} fields, found {len(fields)}"
            )
        labels.append(_parse_label_line(fields, lineno, has_score))
    return labels


def format_label(label: RawLabel) -> str:
    """Render one row with the devkit's fixed-point formatting."""
    parts = [
        label.class_name,
        f"{label.truncation:.2f}",
        f"{label.occlusion:d}",
        f"{label.alpha:.2f}",
        *(f"{v:.2f}" for v in label.bbox2d),
        *(f"{v:.2f}" for v in label.dimensions),
        *(f"{v:.2f}" for v in label.location),
        f"{label.rotation_y:.2f}",
    ]
    if label.score is not None:
        parts.append(f"{label.score:.6f}")
    return " ".join(parts)


def format_label_file(labels: Sequence[RawLabel]) -> str:
    return "".join(format_label(lab) + "\n" for lab in labels)


def read_labels(path: str | os.PathLike, has_score: bool = False) -> list[RawLabel]:
    return parse_label_file(Path(path).read_text(), has_score=has_score)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Calibration:
    """Camera/LiDAR calibration of one KITTI frame.

    Attributes:
        projection_p2: ``(3, 4)`` left color camera projection matrix.
        rect_r0: ``(3, 3)`` rectifying rotation.
        velo_to_cam: ``(3, 4)`` rigid transform from LiDAR to reference camera.
    """

    projection_p2: np.ndarray
    rect_r0: np.ndarray
    velo_to_cam: np.ndarray

    def __post_init__(self):
        for name, shape in (("projection_p2", (3, 4)), ("rect_r0", (3, 3)), ("velo_to_cam", (3, 4))):
            value = np.array(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise DataError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise DataError(f"{name} contains non-finite values")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if abs(np.linalg.det(self.rect_r0)) <= CALIB_DET_TOL:
            raise DataError("R0_rect is singular")
        if abs(np.linalg.det(self.velo_to_cam[:, :3])) <= CALIB_DET_TOL:
            raise DataError("rotation part of Tr_velo_to_cam is singular")

    @classmethod
    def identity(cls) -> "Calibration":
        eye = np.hstack([np.eye(3), np.zeros((3, 1))])
        return cls(eye, np.eye(3), eye)

    @classmethod
    def axis_aligned(cls) -> "Calibration":
        """Pure axis swap LiDAR -> camera with KITTI-like intrinsics.

        Used for synthetic scenes and whenever a frame ships without a calib file.
        """
        p2 = np.array([[721.5377, 0.0, 609.5593, 0.0], [0.0, 721.5377, 172.854, 0.0], [0.0, 0.0, 1.0, 0.0]])
        velo_to_cam = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
        return cls(p2, np.eye(3), velo_to_cam)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Calibration):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("projection_p2", "rect_r0", "velo_to_cam")
        )

    def lidar_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        ref = xyz @ self.velo_to_cam[:, :3].T + self.velo_to_cam[:, 3]
        return ref @ self.rect_r0.T

    def rect_to_lidar(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        ref = np.linalg.solve(self.rect_r0, xyz.T)
        shifted = ref - self.velo_to_cam[:, 3:4]
        return np.linalg.solve(self.velo_to_cam[:, :3], shifted).T

    def rect_to_image(self, xyz: np.ndarray) -> np.ndarray:
        """Project rectified camera points to ``(u, v)`` pixels."""
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        hom = np.hstack([xyz, np.ones((xyz.shape[0], 1))]) @ self.projection_p2.T
        return hom[:, :2] / hom[:, 2:3]


def parse_calib_file(text: str) -> Calibration:
    """Parse ``KEY: v1 v2 ...`` calibration text.

    Only ``P2``, ``R0_rect`` and ``Tr_velo_to_cam`` are required; other keys
    (``P0``, ``Tr_imu_to_velo``, ...) are accepted and ignored.
    """
    entries: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'KEY: values'")
        entries[key.strip()] = rest.split()

    mats = {}
    sizes = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
    for canonical, aliases in _CALIB_KEYS.items():
        tokens = next((entries[a] for a in aliases if a in entries), None)
        if tokens is None:
            raise FormatError(f"calibration is missing {canonical}")
        if len(tokens) != sizes[canonical]:
            raise FormatError(
                f"{canonical} needs {sizes[canonical]} values, found {len(tokens)}"
            )
        values = []
        for tok in tokens:
            try:
                values.append(float(tok))
            except ValueError:
                raise DataError(f"{canonical}: {tok!r} is not a number") from None
        mats[canonical] = np.array(values)

    return Calibration(
        projection_p2=mats["P2"].reshape(3, 4),
        rect_r0=mats["R0_rect"].reshape(3, 3),
        velo_to_cam=mats["Tr_velo_to_cam"].reshape(3, 4),
    )


def format_calib_file(calib: Calibration) -> str:
    def row(key, mat):
        return key + ": " + " ".join(f"{v:.12e}" for v in np.asarray(mat).ravel()) + "\n"

    return (
        row("P2", calib.projection_p2)
        + row("R0_rect", calib.rect_r0)
        + row("Tr_velo_to_cam", calib.velo_to_cam)
    )


def read_calib(path: str | os.PathLike) -> Calibration:
    return parse_calib_file(Path(path).read_text())


# ---------------------------------------------------------------------------
# Splits and directory layout
# ---------------------------------------------------------------------------


def parse_split_file(text: str) -> list[str]:
    """Frame ids of a split file, normalized to 6 digits, order preserved."""
    return [frame_name(tok) for tok in text.split()]


def read_split(path: str | os.PathLike) -> list[str]:
    return parse_split_file(Path(path).read_text())


def format_split_file(frame_ids: Sequence[str]) -> str:
    return "".join(frame_name(f) + "\n" for f in frame_ids)


@dataclass(frozen=True)
class KittiTree:
    """Paths of one KITTI-style dataset root."""

    root: Path

    def __init__(self, root: str | os.PathLike):
        object.__setattr__(self, "root", Path(root))

    def velodyne(self, frame: str) -> Path:
        return self.root / "velodyne" / f"{frame}.bin"

    def label(self, frame: str) -> Path:
        return self.root / "label_2" / f"{frame}.txt"

    def calib(self, frame: str) -> Path:
        return self.root / "calib" / f"{frame}.txt"

    def split(self, name: str = "val") -> Path:
        return self.root / "ImageSets" / f"{name}.txt"

    def frame_ids(self) -> list[str]:
        """All frames with a label file, sorted."""
        label_dir = self.root / "label_2"
        if not label_dir.is_dir():
            return []
        return sorted(p.stem for p in label_dir.glob("*.txt"))
