"""Batch front-end: ``lidar-ora {synth,attack,proxy-sweep,eval}``.

Every subcommand reads an optional YAML config (``--config``); command-line
flags override it. The effective experiment config is echoed as
``run_config.yaml`` at the top of each output tree. Execution-only knobs
(``--workers``, ``--keep-going``) are left out of the echo so the tree does
not depend on them.

Exit codes: 0 success, 1 some frames failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import yaml

from .attack import MAX_BUDGET, AttackConfig, attack_scene
from .errors import ConfigError, OraError
from .geometry import camera_box_to_lidar
from .kitti_io import (
    Calibration,
    KittiTree,
    format_label_file,
    frame_name,
    read_calib,
    read_labels,
    read_point_cloud,
    read_split,
    save_point_cloud,
)
from .manifest import build_manifest, write_manifest
from .proxy_detector import ProxyConfig, detect
from .report import EvalOptions, EvaluationReport, GtFrame, evaluate_dataset
from .synth import SynthConfig, generate_frame, write_frame, write_split

logger = logging.getLogger("lidar_ora")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
DEFAULT_BUDGETS = (0, 10, 20, 40, 60, 100, 150, 200)
DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")
_BUDGET_DIR = re.compile(r"^budget_(\d+)$")


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Optional[Path] = None
    split_file: Optional[Path] = None
    output_root: Optional[Path] = None
    det_root: Optional[Path] = None
    attack: AttackConfig = field(default_factory=AttackConfig)
    budgets: tuple = DEFAULT_BUDGETS
    classes: tuple = DEFAULT_CLASSES
    metrics: EvalOptions = field(default_factory=EvalOptions)
    proxy: Optional[ProxyConfig] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    workers: int = 1
    keep_going: bool = False

    def __post_init__(self):
        budgets = tuple(int(b) for b in self.budgets)
        if not budgets:
            raise ConfigError("at least one budget is required")
        if list(budgets) != sorted(set(budgets)):
            raise ConfigError(f"budgets must be strictly ascending, got {list(budgets)}")
        if budgets[0] < 0:
            raise ConfigError("budgets must be non-negative")
        if budgets[-1] > MAX_BUDGET and not self.attack.unsafe_budget:
            raise ConfigError(f"budget {budgets[-1]} exceeds {MAX_BUDGET}; set attack.unsafe_budget")
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "classes", tuple(self.classes))
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    def attack_config(self, budget: int) -> AttackConfig:
        return replace(self.attack, budget=budget, target_classes=frozenset(self.classes))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("dataset_root", "split_file", "output_root", "det_root"):
            if d.get(key) is not None:
                d[key] = Path(d[key])
        try:
            if "attack" in d:
                d["attack"] = AttackConfig.from_dict({"budget": 0, **(d["attack"] or {})})
            if "metrics" in d:
                d["metrics"] = EvalOptions(**(d["metrics"] or {}))
            if d.get("proxy") is not None:
                d["proxy"] = ProxyConfig(**d["proxy"])
            if "synth" in d:
                synth = dict(d["synth"] or {})
                for key in ("objects_per_frame", "range_m", "count_range", "classes"):
                    if synth.get(key) is not None:
                        synth[key] = tuple(synth[key])
                d["synth"] = SynthConfig(**synth)
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        attack = self.attack.to_dict()
        attack.pop("budget")
        attack.pop("target_classes")
        synth = self.synth.to_dict()
        return {
            "dataset_root": _path_str(self.dataset_root),
            "split_file": _path_str(self.split_file),
            "output_root": _path_str(self.output_root),
            "det_root": _path_str(self.det_root),
            "budgets": list(self.budgets),
            "classes": list(self.classes),
            "attack": attack,
            "metrics": self.metrics.to_dict(),
            "proxy": None if self.proxy is None else self.proxy.to_dict(),
            "synth": {k: list(v) if isinstance(v, tuple) else v for k, v in synth.items()},
        }


def _path_str(p: Optional[Path]) -> Optional[str]:
    return None if p is None else str(p)


def _deep_merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Merge a YAML config file with command-line overrides."""
    base: dict = {}
    if path is not None:
        try:
            base = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"config {path} must be a mapping")
    return RunConfig.from_dict(_deep_merge(base, overrides))


def echo_config(config: RunConfig, root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    path = root / "run_config.yaml"
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# Frame-level workers
# ---------------------------------------------------------------------------


@dataclass
class FrameResult:
    frame_id: str
    num_objects: int = 0
    error: Optional[str] = None
    payload: object = None


def _run_frames(fn: Callable, frame_ids: Sequence[str], config: RunConfig) -> list[FrameResult]:
    """Apply ``fn(frame_id, config)`` to every frame, in split order.

    Without ``keep_going`` nothing new is started after the first failure.
    """
    results: list[FrameResult] = []
    if config.workers == 1:
        for fid in frame_ids:
            results.append(_safe_call(fn, fid, config))
            if results[-1].error and not config.keep_going:
                break
        return results
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(_safe_call, fn, fid, config) for fid in frame_ids]
        for fut in futures:
            results.append(fut.result())
            if results[-1].error and not config.keep_going:
                for rest in futures:
                    rest.cancel()
                break
    return results


def _safe_call(fn: Callable, frame_id: str, config: RunConfig) -> FrameResult:
    try:
        return fn(frame_id, config)
    except (OraError, OSError) as exc:
        return FrameResult(frame_id, error=f"{type(exc).__name__}: {exc}")


def _load_calib(tree: KittiTree, frame_id: str) -> Calibration:
    path = tree.calib(frame_id)
    return read_calib(path) if path.exists() else Calibration.axis_aligned()


def _targets(labels, calib, classes):
    keep = [i for i, lab in enumerate(labels) if lab.class_name in classes]
    return keep, [camera_box_to_lidar(labels[i], calib) for i in keep]


def _attack_frame(frame_id: str, config: RunConfig) -> FrameResult:
    tree = KittiTree(config.dataset_root)
    cloud = read_point_cloud(tree.velodyne(frame_id))
    calib = read_calib(tree.calib(frame_id))
    labels = read_labels(tree.label(frame_id))
    _, boxes = _targets(labels, calib, config.classes)
    for budget in config.budgets:
        acfg = config.attack_config(budget)
        attacked, traces = attack_scene(cloud, boxes, acfg, frame_id)
        out = KittiTree(config.output_root / f"budget_{budget}")
        save_point_cloud(out.velodyne(frame_id), attacked)
        write_manifest(
            out.root / "manifests" / f"{frame_id}.json",
            build_manifest(frame_id, acfg, traces, len(attacked)),
        )
        for src, dst in ((tree.label(frame_id), out.label(frame_id)), (tree.calib(frame_id), out.calib(frame_id))):
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
    return FrameResult(frame_id, num_objects=len(boxes))


def _proxy_frame(frame_id: str, config: RunConfig) -> FrameResult:
    tree = KittiTree(config.dataset_root)
    cloud = read_point_cloud(tree.velodyne(frame_id))
    calib = _load_calib(tree, frame_id)
    labels = read_labels(tree.label(frame_id))
    keep, boxes = _targets(labels, calib, config.classes)
    per_budget = {}
    for budget in config.budgets:
        attacked, _ = attack_scene(cloud, boxes, config.attack_config(budget), frame_id)
        dets = detect(attacked, boxes, config.proxy)
        by_box = {id(d.box): d.score for d in dets}
        rows = [labels[i].with_score(by_box[id(b)]) for i, b in zip(keep, boxes) if id(b) in by_box]
        path = config.output_root / f"budget_{budget}" / "detections" / f"{frame_id}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_label_file(rows))
        per_budget[budget] = rows
    return FrameResult(frame_id, len(boxes), payload=(GtFrame(frame_id, labels, calib), per_budget))


def _synth_frame(frame_id: str, config: RunConfig) -> FrameResult:
    frame = generate_frame(int(frame_id), config.synth)
    write_frame(config.output_root, frame)
    return FrameResult(frame.frame_id, num_objects=len(frame.boxes))


def _gt_frame(frame_id: str, config: RunConfig) -> FrameResult:
    tree = KittiTree(config.dataset_root)
    return FrameResult(frame_id, payload=GtFrame(frame_id, read_labels(tree.label(frame_id)), _load_calib(tree, frame_id)))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _require_dir(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} is required")
    if not path.is_dir():
        raise ConfigError(f"{what} {path} does not exist")
    return path


def _split_ids(config: RunConfig) -> list[str]:
    split = config.split_file
    if split is None:
        default = KittiTree(config.dataset_root).split("val")
        if default.exists():
            split = default
        else:
            return KittiTree(config.dataset_root).frame_ids()
    if not split.exists():
        raise ConfigError(f"split file {split} does not exist")
    try:
        return read_split(split)
    except OraError as exc:
        raise ConfigError(f"bad split file {split}: {exc}") from None


def _finish(results: list[FrameResult], expected: int, root: Path, name: str) -> int:
    failed = [r for r in results if r.error]
    skipped = expected - len(results)
    if failed or skipped:
        errors = {r.frame_id: r.error for r in failed}
        (root / "errors.json").write_text(json.dumps(errors, indent=1, sort_keys=True) + "\n")
        for fid, msg in errors.items():
            logger.error("%s: frame %s failed: %s", name, fid, msg)
        if skipped:
            logger.error("%s: %d frame(s) not processed (use --keep-going to continue past failures)", name, skipped)
        return EXIT_PARTIAL
    stale = root / "errors.json"
    if stale.exists():
        stale.unlink()
    return EXIT_OK


def cmd_attack(config: RunConfig) -> int:
    _require_dir(config.dataset_root, "dataset_root")
    if config.output_root is None:
        raise ConfigError("output_root is required")
    ids = _split_ids(config)
    echo_config(config, config.output_root)
    results = _run_frames(_attack_frame, ids, config)
    ok = [r for r in results if not r.error]
    for budget in config.budgets:
        write_split(config.output_root / f"budget_{budget}", [r.frame_id for r in ok])
    print(
        f"attack: {len(ok)}/{len(ids)} frames, {sum(r.num_objects for r in ok)} objects, "
        f"budgets {list(config.budgets)} -> {config.output_root}"
    )
    return _finish(results, len(ids), config.output_root, "attack")


def cmd_proxy_sweep(config: RunConfig) -> int:
    if config.proxy is None:
        raise ConfigError("proxy-sweep needs a proxy section (or --min-points)")
    _require_dir(config.dataset_root, "dataset_root")
    if config.output_root is None:
        raise ConfigError("output_root is required")
    ids = _split_ids(config)
    echo_config(config, config.output_root)
    results = _run_frames(_proxy_frame, ids, config)
    ok = [r for r in results if not r.error]
    gt_frames = [r.payload[0] for r in ok]
    report = EvaluationReport(config.metrics)
    for budget in config.budgets:
        dets = [r.payload[1][budget] for r in ok]
        evaluate_dataset(gt_frames, dets, config.classes, config.metrics, budget, report)
    report.write(config.output_root)
    print(f"proxy-sweep: {len(ok)}/{len(ids)} frames, budgets {list(config.budgets)} -> {config.output_root}")
    for cls in config.classes:
        row = ", ".join(f"{b}:{_fmt(report.recall.get((cls, 'all', b)))}" for b in config.budgets)
        print(f"  recall {cls}: {row}")
    return _finish(results, len(ids), config.output_root, "proxy-sweep")


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def _detection_sets(det_root: Path) -> list[tuple[int, Path]]:
    """``(budget, dir)`` pairs; a tree without ``budget_<k>`` folders is budget 0."""
    subs = []
    for child in det_root.iterdir():
        m = _BUDGET_DIR.match(child.name)
        if m and child.is_dir():
            det_dir = child / "detections"
            subs.append((int(m.group(1)), det_dir if det_dir.is_dir() else child))
    if subs:
        return sorted(subs)
    data = det_root / "data"
    return [(0, data if data.is_dir() else det_root)]


def _read_detections(det_dir: Path, ids: Sequence[str]) -> list:
    present = {p.stem for p in det_dir.glob("*.txt")}
    if not present:
        logger.warning("eval: %s holds no detection files; every frame counts as empty", det_dir)
        return [[] for _ in ids]
    missing = [fid for fid in ids if fid not in present]
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise ConfigError(f"{det_dir} lacks detections for {len(missing)} frame(s): {shown}")
    return [read_labels(det_dir / f"{fid}.txt", has_score=True) for fid in ids]


def cmd_eval(config: RunConfig) -> int:
    _require_dir(config.dataset_root, "gt_root")
    det_root = _require_dir(config.det_root, "det_root")
    if config.output_root is None:
        raise ConfigError("output_root is required")
    ids = _split_ids(config)
    echo_config(config, config.output_root)
    results = _run_frames(_gt_frame, ids, config)
    ok = [r for r in results if not r.error]
    gt_frames = [r.payload for r in ok]
    report = EvaluationReport(config.metrics)
    for budget, det_dir in _detection_sets(det_root):
        try:
            dets = _read_detections(det_dir, [f.frame_id for f in gt_frames])
        except OraError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"unreadable detections in {det_dir}: {exc}") from None
        evaluate_dataset(gt_frames, dets, config.classes, config.metrics, budget, report)
    report.write(config.output_root)
    print(f"eval: {len(ok)}/{len(ids)} frames, budgets {report.budgets} -> {config.output_root}")
    for (cls, diff, budget), ap in sorted(report.ap_table.items()):
        if diff == "moderate":
            print(f"  AP {cls} moderate budget {budget}: {'-' if ap is None else f'{ap:.2f}'}")
    return _finish(results, len(ids), config.output_root, "eval")


def cmd_synth(config: RunConfig) -> int:
    if config.output_root is None:
        raise ConfigError("output_root is required")
    ids = [frame_name(i) for i in range(config.synth.num_frames)]
    echo_config(config, config.output_root)
    results = _run_frames(_synth_frame, ids, config)
    ok = [r for r in results if not r.error]
    write_split(config.output_root, [r.frame_id for r in ok])
    print(f"synth: {len(ok)} frames, {sum(r.num_objects for r in ok)} objects -> {config.output_root}")
    return _finish(results, len(ids), config.output_root, "synth")


COMMANDS = {
    "attack": cmd_attack,
    "eval": cmd_eval,
    "proxy-sweep": cmd_proxy_sweep,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config; flags override its values")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--workers", type=int, help="frame-level worker processes (default 1)")
    common.add_argument("--keep-going", action="store_true", default=None, help="continue past failing frames")
    common.add_argument("--output-root", help="output directory")
    common.add_argument("--classes", nargs="+", help="object classes to attack / evaluate")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset-root", help="KITTI-style root with velodyne/, label_2/, calib/")
    data.add_argument("--split-file", help="frame id list (default: <root>/ImageSets/val.txt)")

    attack = argparse.ArgumentParser(add_help=False)
    attack.add_argument("--budgets", nargs="+", type=int, help="points per object, ascending")
    attack.add_argument("--sector-width-deg", type=float)
    attack.add_argument("--displacement", nargs=2, type=float, metavar=("D_MIN", "D_MAX"))
    attack.add_argument("--unsafe-budget", action="store_true", default=None)

    metrics = argparse.ArgumentParser(add_help=False)
    metrics.add_argument("--interpolation", choices=["11-point", "40-point"])
    metrics.add_argument(
        "--sampling", choices=["exact", "kitti41"], help="PR sampling; kitti41 mirrors the official evaluator"
    )

    parser = argparse.ArgumentParser(prog="lidar-ora", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("attack", parents=[common, data, attack], help="write perturbed KITTI trees per budget")
    ev = sub.add_parser("eval", parents=[common, data, metrics], help="score KITTI detection files")
    ev.add_argument("--gt-root", dest="dataset_root", help="alias of --dataset-root")
    ev.add_argument("--det-root", help="detection files, or budget_<k>/detections/ folders")
    px = sub.add_parser("proxy-sweep", parents=[common, data, attack, metrics], help="attack, proxy-detect, evaluate")
    px.add_argument("--min-points", type=int, help="proxy detection threshold (enables the proxy)")
    px.add_argument("--score-scale", type=float)
    sy = sub.add_parser("synth", parents=[common], help="generate a synthetic KITTI-style corpus")
    sy.add_argument("--frames", type=int)
    sy.add_argument("--objects", nargs=2, type=int, metavar=("MIN", "MAX"))
    sy.add_argument("--count-range", nargs=2, type=int, metavar=("LO", "HI"))
    sy.add_argument("--separate-azimuths", action="store_true", default=None)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """Config-dict fragment for every flag that was actually given."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    out: dict = {}
    for key in ("dataset_root", "split_file", "output_root", "det_root", "workers", "keep_going"):
        if key in given:
            out[key] = given[key]
    if "classes" in given:
        out["classes"] = given["classes"]
    if "budgets" in given:
        out["budgets"] = given["budgets"]
    attack = {}
    if "seed" in given:
        attack["rng_seed"] = given["seed"]
    if "sector_width_deg" in given:
        attack["sector_width"] = math.radians(given["sector_width_deg"])
    if "displacement" in given:
        attack["displacement_range"] = given["displacement"]
    if "unsafe_budget" in given:
        attack["unsafe_budget"] = True
    if attack:
        out["attack"] = attack
    metrics = {k: given[k] for k in ("interpolation", "sampling") if k in given}
    if metrics:
        out["metrics"] = metrics
    proxy = {k: given[k] for k in ("min_points", "score_scale") if k in given}
    if proxy:
        out["proxy"] = proxy
    synth = {}
    if "seed" in given:
        synth["seed"] = given["seed"]
    if "frames" in given:
        synth["num_frames"] = given["frames"]
    if "objects" in given:
        synth["objects_per_frame"] = given["objects"]
    if "count_range" in given:
        synth["count_range"] = given["count_range"]
    if "separate_azimuths" in given:
        synth["separate_azimuths"] = True
    if "classes" in given and args.command == "synth":
        synth["classes"] = given["classes"]
    if synth:
        out["synth"] = synth
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        config = load_run_config(args.config, _overrides(args))
        if args.command == "proxy-sweep" and config.proxy is None:
            raise ConfigError("proxy-sweep needs a proxy section in the config or --min-points")
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"lidar-ora {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
