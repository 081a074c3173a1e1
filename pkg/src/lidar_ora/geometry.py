"""Frame transforms and metric geometry in the LiDAR frame.

Conventions: x forward, y left, z up; azimuth is ``atan2(y, x)`` so larger
azimuth means further to the left. Boxes are closed sets (a point on a face
is inside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, GeometryError
from .kitti_io import Calibration, PointCloud, RawLabel

INSIDE_TOL = 1e-9
CLIP_TOL = 1e-9
MIN_POLY_AREA = 1e-12
_SECTOR_TOL = 1e-12


def normalize_angle(angle: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`."""
    wrapped = np.remainder(np.asarray(angles, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class BoundingBox3D:
    """Oriented box in the LiDAR frame.

    ``center`` is the geometric center, ``dims`` is ``(length, width, height)``
    with length along the heading, and ``yaw`` rotates about +z.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    class_name: str = ""

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise DataError("center and dims need three components")
        if not all(math.isfinite(v) for v in center + dims + (float(self.yaw),)):
            raise DataError("box parameters must be finite")
        if min(dims) <= 0.0:
            raise DataError(f"box dimensions must be strictly positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def horizontal_range(self) -> float:
        """Distance of the center from the sensor in the ground plane."""
        return math.hypot(self.center[0], self.center[1])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# Camera <-> LiDAR
# ---------------------------------------------------------------------------


def camera_box_to_lidar(label: RawLabel, calib: Calibration) -> BoundingBox3D:
    """Convert a KITTI label (camera-rectified, bottom-center) to a LiDAR box.

    The bottom-face center is mapped through the inverse of
    ``R0_rect @ Tr_velo_to_cam`` and lifted by half the height along +z.
    Yaw follows the usual KITTI relation ``yaw = -rotation_y - pi/2``.
    """
    if label.is_dontcare:
        raise DataError("DontCare rows have no 3D box")
    h, w, l = label.dimensions
    bottom = calib.rect_to_lidar(np.asarray(label.location, dtype=np.float64))[0]
    center = bottom + np.array([0.0, 0.0, h / 2.0])
    return BoundingBox3D(
        center=tuple(center),
        dims=(l, w, h),
        yaw=-label.rotation_y - math.pi / 2.0,
        class_name=label.class_name,
    )


def lidar_box_to_camera(box: BoundingBox3D, calib: Calibration):
    """Inverse of :func:`camera_box_to_lidar`.

    Returns:
        ``(location, dimensions, rotation_y)`` as KITTI label fields.
    """
    l, w, h = box.dims
    bottom = np.asarray(box.center) - np.array([0.0, 0.0, h / 2.0])
    location = calib.lidar_to_rect(bottom)[0]
    return tuple(location), (h, w, l), normalize_angle(-box.yaw - math.pi / 2.0)


# ---------------------------------------------------------------------------
# Box primitives
# ---------------------------------------------------------------------------

# Box-frame sign pattern: bottom face first, then top face; each face runs
# (+l,+w), (-l,+w), (-l,-w), (+l,-w), i.e. counter-clockwise seen from above.
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
        [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
    ],
    dtype=np.float64,
)


def box_corners(box: BoundingBox3D) -> np.ndarray:
    """The 8 corners as an ``(8, 3)`` array.

    Rows 0-3 are the bottom face and rows 4-7 the top face, each listed
    counter-clockwise (seen from +z) starting at the front-left corner
    ``(+l/2, +w/2)`` of the box frame. Corner ``i + 4`` sits above corner ``i``.
    """
    half = 0.5 * np.asarray(box.dims)
    local = _CORNER_SIGNS * half
    return local @ box.rotation().T + np.asarray(box.center)


def bev_polygon(box: BoundingBox3D) -> np.ndarray:
    """Counter-clockwise ``(4, 2)`` footprint of the box."""
    return box_corners(box)[:4, :2]


def _xyz(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.xyz
    arr = np.asarray(points, dtype=np.float64)
    return np.atleast_2d(arr)[:, :3]


def points_in_box(cloud, box: BoundingBox3D, tol: float = INSIDE_TOL) -> np.ndarray:
    """Indices of points inside or on the boundary of ``box``.

    Args:
        cloud: a :class:`PointCloud` or an ``(N, >=3)`` array.
        box: the query box.
        tol: slack added to every half-extent.

    Returns:
        Sorted int64 index array.
    """
    xyz = _xyz(cloud)
    if xyz.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    local = (xyz - np.asarray(box.center)) @ box.rotation()
    half = 0.5 * np.asarray(box.dims) + tol
    inside = np.all(np.abs(local) <= half, axis=1)
    return np.flatnonzero(inside).astype(np.int64)


def bev_contains_origin(box: BoundingBox3D, tol: float = INSIDE_TOL) -> bool:
    local = -np.asarray(box.center[:2]) @ box.rotation()[:2, :2]
    return bool(np.all(np.abs(local) <= 0.5 * np.asarray(box.dims[:2]) + tol))


# ---------------------------------------------------------------------------
# Azimuth sectors
# ---------------------------------------------------------------------------


def azimuth(point) -> float:
    """Horizontal angle ``atan2(y, x)`` in ``(-pi, pi]``; z is ignored."""
    x, y = float(point[0]), float(point[1])
    if x == 0.0 and y == 0.0:
        raise GeometryError("azimuth is undefined for a point on the z-axis")
    return normalize_angle(math.atan2(y, x))


def azimuths(xyz: np.ndarray) -> np.ndarray:
    """Vectorized :func:`azimuth`; points on the z-axis give NaN."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    out = normalize_angles(np.arctan2(xyz[:, 1], xyz[:, 0]))
    on_axis = (xyz[:, 0] == 0.0) & (xyz[:, 1] == 0.0)
    out[on_axis] = np.nan
    return out


@dataclass(frozen=True)
class AzimuthSector:
    """Horizontal wedge ``[anchor - width, anchor]`` (wrap-around safe).

    ``anchor_azimuth`` is the left edge; the sector extends clockwise (towards
    smaller azimuth) by ``width`` radians.
    """

    anchor_azimuth: float
    width: float

    def __post_init__(self):
        if not (0.0 < self.width < math.pi):
            raise GeometryError(f"sector width must be in (0, pi), got {self.width}")
        object.__setattr__(self, "anchor_azimuth", normalize_angle(float(self.anchor_azimuth)))

    @property
    def right_edge(self) -> float:
        return normalize_angle(self.anchor_azimuth - self.width)

    def contains(self, az) -> np.ndarray:
        """Membership of azimuth value(s); NaN is never inside."""
        offset = normalize_angles(self.anchor_azimuth - np.asarray(az, dtype=np.float64))
        # offset of +pi comes from an angle exactly opposite; width < pi excludes it anyway
        return (offset >= -_SECTOR_TOL) & (offset <= self.width + _SECTOR_TOL)


def spoofing_sector(box: BoundingBox3D, width: float) -> AzimuthSector:
    """Sector anchored at the left-most corner of ``box``.

    "Left-most" is the corner of maximum azimuth as seen from the sensor
    (LiDAR +y is left). The box footprint must not contain the sensor, which
    keeps every corner within less than pi of the center direction.
    """
    if bev_contains_origin(box):
        raise GeometryError("box footprint contains the sensor origin")
    center_az = math.atan2(box.center[1], box.center[0])
    corners = box_corners(box)
    offsets = normalize_angles(np.arctan2(corners[:, 1], corners[:, 0]) - center_az)
    return AzimuthSector(normalize_angle(center_az + float(offsets.max())), width)


def filter_by_sector(cloud, indices, sector: AzimuthSector) -> np.ndarray:
    """Subset of ``indices`` whose points lie in ``sector``; order is kept."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if indices.size == 0:
        return indices
    az = azimuths(_xyz(cloud)[indices])
    return indices[sector.contains(az)]


# ---------------------------------------------------------------------------
# Ray displacement
# ---------------------------------------------------------------------------


def displace_along_ray(point, distance: float) -> np.ndarray:
    """Push a point ``distance`` metres further along its ray from the sensor.

    Extra components after xyz (reflectance) are carried through unchanged.
    """
    if distance < 0.0:
        raise ValueError(f"distance must be non-negative, got {distance}")
    return displace_along_rays(np.asarray(point, dtype=np.float64)[None, :], [distance])[0]


def displace_along_rays(points: np.ndarray, distances) -> np.ndarray:
    """Row-wise :func:`displace_along_ray` for an ``(K, >=3)`` array."""
    points = np.array(points, dtype=np.float64, copy=True)
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    if np.any(distances < 0.0):
        raise ValueError("distances must be non-negative")
    rng = np.linalg.norm(points[:, :3], axis=1)
    if np.any(rng == 0.0):
        raise GeometryError("cannot displace a point located at the sensor origin")
    points[:, :3] *= ((rng + distances) / rng)[:, None]
    return points


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segment_line_hit(p, q, a, b):
    # intersection of segment p->q with the infinite line a->b
    dp = _cross(a, b, p)
    dq = _cross(a, b, q)
    t = min(1.0, max(0.0, dp / (dp - dq)))
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    pts = np.asarray(poly, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex_polygon(subject, clip) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in np.asarray(subject, dtype=np.float64)]
    clip = [tuple(p) for p in np.asarray(clip, dtype=np.float64)]
    for i in range(len(clip)):
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge_len = math.hypot(b[0] - a[0], b[1] - a[1])
        tol = CLIP_TOL * edge_len
        inputs, output = output, []
        if not inputs:
            break
        prev = inputs[-1]
        prev_in = _cross(a, b, prev) >= -tol
        for cur in inputs:
            cur_in = _cross(a, b, cur) >= -tol
            if cur_in:
                if not prev_in:
                    output.append(_segment_line_hit(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_segment_line_hit(prev, cur, a, b))
            prev, prev_in = cur, cur_in
    return output


def bev_intersection_area(a: BoundingBox3D, b: BoundingBox3D) -> float:
    poly = clip_convex_polygon(bev_polygon(a), bev_polygon(b))
    area = abs(polygon_area(poly))
    return area if area >= MIN_POLY_AREA else 0.0


def iou_3d(a: BoundingBox3D, b: BoundingBox3D) -> float:
    """Volumetric IoU of two yaw-rotated boxes.

    Intersection = footprint overlap area (convex clipping) times the
    overlap of the vertical extents.
    """
    if a.center == b.center and a.dims == b.dims and a.yaw == b.yaw:
        return 1.0
    reach = 0.5 * (math.hypot(a.dims[0], a.dims[1]) + math.hypot(b.dims[0], b.dims[1]))
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > reach:
        return 0.0
    z_overlap = min(a.center[2] + a.dims[2] / 2, b.center[2] + b.dims[2] / 2) - max(
        a.center[2] - a.dims[2] / 2, b.center[2] - b.dims[2] / 2
    )
    if z_overlap <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * z_overlap
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_matrix(boxes_a: Sequence[BoundingBox3D], boxes_b: Sequence[BoundingBox3D]) -> np.ndarray:
    """Pairwise :func:`iou_3d` as an ``(len(a), len(b))`` array."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_3d(a, b)
    return out
