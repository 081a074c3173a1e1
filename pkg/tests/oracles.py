"""Independent reference computations used to cross-check the library.

Nothing here calls into the functions under test; each oracle re-derives
its answer from first principles (half-spaces, sampling, tallies).
"""

import math

import numpy as np


def box_axes(box):
    """Unit heading, lateral and vertical axes of a box, from its yaw."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])


def halfspace_inside(xyz, box, tol=1e-9):
    """Point-in-box via the six face half-spaces ``|n . (p - c)| <= half + tol``."""
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    rel = xyz - np.asarray(box.center)
    inside = np.ones(len(xyz), dtype=bool)
    for axis, extent in zip(box_axes(box), box.dims):
        d = rel @ axis
        inside &= (d <= extent / 2 + tol) & (-d <= extent / 2 + tol)
    return inside


def corner_points(box):
    """Corners from center +/- half extents along the box axes."""
    out = []
    ax = box_axes(box)
    for sl in (1, -1):
        for sw in (1, -1):
            for sh in (1, -1):
                out.append(np.asarray(box.center) + sl * box.dims[0] / 2 * ax[0] + sw * box.dims[1] / 2 * ax[1] + sh * box.dims[2] / 2 * ax[2])
    return np.array(out)


def monte_carlo_iou(a, b, n, rng):
    """IoU from uniform samples over the axis-aligned hull of both boxes."""
    pts = np.vstack([corner_points(a), corner_points(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    samples = rng.uniform(lo, hi, size=(n, 3))
    in_a = halfspace_inside(samples, a, tol=0.0)
    in_b = halfspace_inside(samples, b, tol=0.0)
    both = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return both / union if union else 0.0


def max_corner_azimuth(box):
    """Left-most corner azimuth, unwrapped about the box center direction."""
    ref = math.atan2(box.center[1], box.center[0])
    best = -math.inf
    for x, y, _ in corner_points(box):
        rel = math.atan2(y, x) - ref
        rel = (rel + math.pi) % (2 * math.pi) - math.pi
        best = max(best, rel)
    ang = ref + best
    return math.atan2(math.sin(ang), math.cos(ang))


def in_sector_deg(az_deg, lo_deg, hi_deg):
    """Membership in the clockwise arc from ``hi`` down to ``lo`` (degrees, wrap-aware)."""
    span = (hi_deg - lo_deg) % 360.0
    return ((hi_deg - az_deg) % 360.0) <= span + 1e-9


def tally_recall_by_bin(objects, edges):
    """``objects`` is a list of ``(range, counted, detected)``; plain per-bin counting."""
    hits = [0] * (len(edges) - 1)
    totals = [0] * (len(edges) - 1)
    for rng_m, counted, detected in objects:
        if not counted:
            continue
        for k in range(len(edges) - 1):
            if edges[k] <= rng_m < edges[k + 1]:
                totals[k] += 1
                hits[k] += int(detected)
    return [h / t if t else None for h, t in zip(hits, totals)]
