"""Per-frame JSON manifest describing an attack run.

Floats are written with ``repr`` precision by :mod:`json`, so coordinates
read back bit-identical to the in-memory float64 values.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Sequence

import jsonschema

from .attack import RNG_ALGORITHM, AttackConfig, AttackTrace
from .errors import FormatError

SCHEMA_VERSION = "1.0"

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "frame_id", "config", "conventions", "num_points", "objects"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "frame_id": {"type": "string"},
        "num_points": {"type": "integer", "minimum": 0},
        "config": {
            "type": "object",
            "required": ["budget", "sector_width", "displacement_range", "rng_seed", "target_classes"],
        },
        "conventions": {"type": "object"},
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "object_id", "class_name", "box", "sector", "num_object_points",
                    "num_candidates", "selected_indices", "original_points",
                    "displaced_points", "distances",
                ],
                "properties": {
                    "object_id": {"type": "integer", "minimum": 0},
                    "class_name": {"type": "string"},
                    "box": {
                        "type": "object",
                        "required": ["center", "dims", "yaw"],
                    },
                    "sector": {
                        "type": "object",
                        "required": ["anchor_azimuth", "width"],
                    },
                    "num_object_points": {"type": "integer", "minimum": 0},
                    "num_candidates": {"type": "integer", "minimum": 0},
                    "selected_indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "original_points": {"type": "array", "items": _POINT},
                    "displaced_points": {"type": "array", "items": _POINT},
                    "distances": {"type": "array", "items": {"type": "number", "minimum": 0}},
                },
            },
        },
    },
}

CONVENTIONS = {
    "frame": "velodyne (x forward, y left, z up)",
    "sector_anchor": "corner with maximum azimuth (left-most seen from the sensor)",
    "sector_extent": "anchor - width .. anchor",
    "displacement": "uniform(d_min, d_max) metres along the ray, reflectance kept",
    "budget_scope": "per object",
    "rng": RNG_ALGORITHM,
    "scene_collision_check": False,
}


def build_manifest(
    frame_id: str,
    config: AttackConfig,
    traces: Sequence[AttackTrace],
    num_points: int,
) -> dict:
    objects = []
    for tr in traces:
        objects.append(
            {
                "object_id": tr.object_id,
                "class_name": tr.box.class_name,
                "box": {"center": list(tr.box.center), "dims": list(tr.box.dims), "yaw": tr.box.yaw},
                "sector": {"anchor_azimuth": tr.sector.anchor_azimuth, "width": tr.sector.width},
                "num_object_points": int(tr.selected_indices.size + tr.untouched_object_indices.size),
                "num_candidates": int(tr.candidate_indices.size),
                "selected_indices": tr.selected_indices.tolist(),
                "original_points": tr.original_points.tolist(),
                "displaced_points": tr.displaced_points.tolist(),
                "distances": tr.distances.tolist(),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "frame_id": frame_id,
        "config": config.to_dict(),
        "conventions": dict(CONVENTIONS),
        "num_points": int(num_points),
        "objects": objects,
    }


def validate_manifest(manifest: dict) -> dict:
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise FormatError(f"invalid attack manifest: {exc.message}") from None
    return manifest


def dumps_manifest(manifest: dict) -> str:
    return json.dumps(validate_manifest(manifest), indent=1, sort_keys=True) + "\n"


def loads_manifest(text: str) -> dict:
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    return validate_manifest(manifest)


def write_manifest(path: str | os.PathLike, manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(manifest))


def read_manifest(path: str | os.PathLike) -> dict:
    return loads_manifest(Path(path).read_text())
