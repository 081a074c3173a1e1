"""Random object removal: displacing a target's in-sector returns behind it.

A spoofer that answers the sensor's pulse with a delayed return replaces the
genuine measurement on that ray (the sensor keeps a single return per ray).
The attack therefore moves a point along its ray instead of adding one; the
cloud keeps its cardinality and every ray keeps its direction.

Per target object:

1. collect the object's points (closed box test);
2. keep those inside the spoofer's horizontal sector, anchored at the
   object's left-most corner;
3. draw ``min(budget, #candidates)`` of them uniformly without replacement;
4. push each drawn point back along its ray by ``Uniform(d_min, d_max)`` metres.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AmbiguityError, ConfigError
from .geometry import (
    AzimuthSector,
    BoundingBox3D,
    displace_along_rays,
    filter_by_sector,
    points_in_box,
    spoofing_sector,
)
from .kitti_io import PointCloud

MAX_BUDGET = 200
DEFAULT_SECTOR_WIDTH = math.radians(10.0)
DEFAULT_DISPLACEMENT = (1.0, 5.0)
DEFAULT_TARGETS = frozenset({"Car", "Pedestrian", "Cyclist"})

RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(frame_key, object_index))"


@dataclass(frozen=True)
class AttackConfig:
    """Adversary capabilities.

    Attributes:
        budget: spoofed points per target object.
        sector_width: horizontal spoofing angle, radians.
        displacement_range: ``(d_min, d_max)`` metres pushed behind the original return.
        rng_seed: 64-bit seed; per-object streams are derived from it.
        target_classes: classes whose objects are attacked.
        unsafe_budget: allow budgets above :data:`MAX_BUDGET`.
    """

    budget: int = MAX_BUDGET
    sector_width: float = DEFAULT_SECTOR_WIDTH
    displacement_range: tuple[float, float] = DEFAULT_DISPLACEMENT
    rng_seed: int = 0
    target_classes: frozenset = field(default=DEFAULT_TARGETS)
    unsafe_budget: bool = False

    def __post_init__(self):
        if isinstance(self.budget, bool) or int(self.budget) != self.budget or self.budget < 0:
            raise ConfigError(f"budget must be a non-negative integer, got {self.budget!r}")
        object.__setattr__(self, "budget", int(self.budget))
        if self.budget > MAX_BUDGET and not self.unsafe_budget:
            raise ConfigError(
                f"budget {self.budget} exceeds the {MAX_BUDGET}-point cap; "
                "set unsafe_budget=True to override"
            )
        if not (0.0 < self.sector_width < math.pi):
            raise ConfigError("sector_width must lie in (0, pi)")
        d_min, d_max = (float(v) for v in self.displacement_range)
        if not (math.isfinite(d_max) and 0.0 <= d_min <= d_max):
            raise ConfigError("displacement_range needs 0 <= d_min <= d_max < inf")
        object.__setattr__(self, "displacement_range", (d_min, d_max))
        if not (0 <= int(self.rng_seed) < 2**64):
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "rng_seed", int(self.rng_seed))
        object.__setattr__(self, "target_classes", frozenset(self.target_classes))

    def with_budget(self, budget: int) -> "AttackConfig":
        return replace(self, budget=budget)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["displacement_range"] = list(self.displacement_range)
        d["target_classes"] = sorted(self.target_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if "sector_width_deg" in d:
            d["sector_width"] = math.radians(d.pop("sector_width_deg"))
        if "displacement_range" in d:
            d["displacement_range"] = tuple(d["displacement_range"])
        if "target_classes" in d:
            d["target_classes"] = frozenset(d["target_classes"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True, eq=False)
class AttackTrace:
    """What the attack did to one object.

    ``selected_indices`` index into the scene cloud and are listed in draw
    order; row ``i`` of ``original_points``, ``displaced_points`` and
    ``distances`` belongs to ``selected_indices[i]``.
    """

    object_id: int
    box: BoundingBox3D
    sector: AzimuthSector
    candidate_indices: np.ndarray
    selected_indices: np.ndarray
    original_points: np.ndarray
    displaced_points: np.ndarray
    distances: np.ndarray
    untouched_object_indices: np.ndarray
    untouched_points: np.ndarray

    @property
    def num_displaced(self) -> int:
        return int(self.selected_indices.size)

    @property
    def object_indices(self) -> np.ndarray:
        return np.sort(np.concatenate([self.selected_indices, self.untouched_object_indices]))

    @property
    def points(self) -> np.ndarray:
        """The object's point set after the attack: untouched returns, then displaced ones."""
        return np.vstack([self.untouched_points, self.displaced_points])


def frame_key(frame_id: int | str) -> int:
    """Stable integer for an id used to derive RNG substreams."""
    if isinstance(frame_id, (int, np.integer)):
        return int(frame_id)
    if frame_id.isascii() and frame_id.isdigit():
        return int(frame_id)
    return zlib.crc32(frame_id.encode("utf-8"))


def object_rng(seed: int, frame_id: int | str, object_index: int) -> np.random.Generator:
    """Independent generator for one object of one frame (see :data:`RNG_ALGORITHM`)."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(frame_key(frame_id), object_index))
    return np.random.Generator(np.random.PCG64(seq))


def select_candidates(cloud: PointCloud, box: BoundingBox3D, sector_width: float) -> np.ndarray:
    """Object points that fall inside the spoofing sector of ``box``."""
    sector = spoofing_sector(box, sector_width)
    return filter_by_sector(cloud, points_in_box(cloud, box), sector)


def sample_attack_points(candidates, budget: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of ``min(budget, len(candidates))`` distinct candidates.

    The generator always consumes one full permutation, so for a fixed seed
    the selection at a smaller budget is a prefix of the selection at a
    larger one.
    """
    if budget < 0:
        raise ConfigError("budget must be non-negative")
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1)
    order = rng.permutation(candidates.size)
    return candidates[order[:budget]]


def build_attack_trace(
    cloud: PointCloud,
    box: BoundingBox3D,
    config: AttackConfig,
    rng: np.random.Generator,
    object_id: int = 0,
) -> AttackTrace:
    """Run the random removal attack against a single object."""
    if box.class_name not in config.target_classes:
        raise ConfigError(f"class {box.class_name!r} is not a target class")
    sector = spoofing_sector(box, config.sector_width)
    object_idx = points_in_box(cloud, box)
    candidates = filter_by_sector(cloud, object_idx, sector)
    selected = sample_attack_points(candidates, config.budget, rng)
    d_min, d_max = config.displacement_range
    # one draw per candidate keeps distances aligned across budgets
    distances = rng.uniform(d_min, d_max, size=candidates.size)[: selected.size]

    original = np.asarray(cloud.points[selected], dtype=np.float64)
    displaced = displace_along_rays(original, distances)
    untouched = np.setdiff1d(object_idx, selected, assume_unique=True)
    return AttackTrace(
        object_id=object_id,
        box=box,
        sector=sector,
        candidate_indices=candidates,
        selected_indices=selected,
        original_points=original,
        displaced_points=displaced,
        distances=distances,
        untouched_object_indices=untouched,
        untouched_points=np.asarray(cloud.points[untouched], dtype=np.float64),
    )


def check_disjoint_targets(cloud: PointCloud, targets: Sequence[BoundingBox3D]) -> None:
    """Raise :class:`AmbiguityError` if any point lies in two target boxes."""
    owner = np.full(len(cloud), -1, dtype=np.int64)
    for i, box in enumerate(targets):
        idx = points_in_box(cloud, box)
        clash = owner[idx] >= 0
        if clash.any():
            other = int(owner[idx][clash][0])
            raise AmbiguityError(
                f"targets {other} and {i} share {int(clash.sum())} point(s)"
            )
        owner[idx] = i


def attack_scene(
    cloud: PointCloud,
    targets: Sequence[BoundingBox3D],
    config: AttackConfig,
    frame_id: int | str = 0,
) -> tuple[PointCloud, list[AttackTrace]]:
    """Attack every target of one frame independently.

    Boxes whose class is not in ``config.target_classes`` are left alone. Each
    attacked object draws from its own substream keyed by
    ``(config.rng_seed, frame_id, index in targets)``, so the result does not
    depend on processing order.

    Returns:
        The perturbed cloud (float64, same length and order as ``cloud``) and
        one trace per attacked object.
    """
    attacked = [(i, box) for i, box in enumerate(targets) if box.class_name in config.target_classes]
    check_disjoint_targets(cloud, [box for _, box in attacked])

    points = np.array(cloud.points, dtype=np.float64, copy=True)
    traces = []
    for i, box in attacked:
        rng = object_rng(config.rng_seed, frame_id, i)
        trace = build_attack_trace(cloud, box, config, rng, object_id=i)
        points[trace.selected_indices] = trace.displaced_points
        traces.append(trace)
    return PointCloud(points), traces
