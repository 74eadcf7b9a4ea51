"""Batch command-line front end for the radar preprocessing pipeline.

Subcommands: encode (density/pillar/voxel artifacts), kde-heatmap (BEV
density grid as PGM + CSV), assign (anchor targets from labels), eval
(AP report), synth (seeded scene files), bench (stage timings).

Settings resolve as flag > config file > named profile default.  Exit
codes: 0 success, 1 internal error, 2 malformed input data, 3 bad
configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .cloud import Roi3D, filter_roi
from .errors import ConfigError, InputFormatError
from .evaluation import GroundTruth, evaluate, format_report
from .kde import kde_multiband
from .pillars import canvas_shape, pillar_feature_names, pillarize
from .profiles import PipelineProfile, get_profile, list_profiles
from .synth import gen_scene, make_scene_spec
from .targets import assign_targets, assignment_record, generate_anchors
from .voxels import voxelize

_CONFIG_KEYS = {
    "profile", "roi", "bandwidths", "kernel_dims", "epsilon", "pillar_cell",
    "max_points_n", "voxel_cell", "eval_thresholds", "max_range_m",
    "corridor", "recall_positions", "seed", "reduce", "threads",
    "channel_meta",
}


def _parse_floats(text: str, n: int | None = None, what: str = "value") -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse {what} list from {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} comma-separated numbers, "
                          f"got {len(vals)} in {text!r}")
    return vals


def _parse_roi(spec) -> Roi3D:
    if isinstance(spec, str):
        vals = _parse_floats(spec, 6, "roi")
    else:
        vals = tuple(float(v) for v in spec)
        if len(vals) != 6:
            raise ConfigError(f"roi needs 6 numbers, got {len(vals)}")
    try:
        return Roi3D(*vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution must look like 320x320, got {text!r}") \
            from None
    if h < 1 or w < 1:
        raise ConfigError(f"resolution must be positive, got {text!r}")
    return h, w


def _load_config_file(path) -> dict:
    cfg = io.read_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return cfg


class _Settings:
    """Fully resolved run settings: profile plus command-level extras."""

    def __init__(self, profile: PipelineProfile, seed: int, reduce: str,
                 threads: int, corridor: Roi3D | None, recall_positions: int):
        self.profile = profile
        self.seed = seed
        self.reduce = reduce
        self.threads = threads
        self.corridor = corridor
        self.recall_positions = recall_positions


def _resolve_settings(args) -> _Settings:
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) \
        else {}
    name = getattr(args, "profile", None) or file_cfg.get("profile") or "vod"
    profile = get_profile(name)

    updates = {}
    if "roi" in file_cfg:
        updates["roi"] = _parse_roi(file_cfg["roi"])
    if "bandwidths" in file_cfg:
        updates["bandwidths"] = tuple(float(b) for b in file_cfg["bandwidths"])
    if "kernel_dims" in file_cfg:
        updates["kernel_dims"] = tuple(str(d) for d in file_cfg["kernel_dims"])
    if "epsilon" in file_cfg:
        updates["epsilon"] = float(file_cfg["epsilon"])
    if "pillar_cell" in file_cfg:
        updates["pillar_cell"] = float(file_cfg["pillar_cell"])
    if "max_points_n" in file_cfg:
        updates["max_points_n"] = int(file_cfg["max_points_n"])
    if "voxel_cell" in file_cfg:
        cell = tuple(float(v) for v in file_cfg["voxel_cell"])
        if len(cell) != 3:
            raise ConfigError("voxel_cell needs 3 numbers")
        updates["voxel_cell"] = cell
    if "eval_thresholds" in file_cfg:
        updates["eval_thresholds"] = {str(k): float(v) for k, v in
                                      file_cfg["eval_thresholds"].items()}
    if "max_range_m" in file_cfg:
        v = file_cfg["max_range_m"]
        updates["max_range_m"] = None if v is None else float(v)
    if "channel_meta" in file_cfg:
        updates["channel_meta"] = dict(file_cfg["channel_meta"])

    if getattr(args, "roi", None):
        updates["roi"] = _parse_roi(args.roi)
    if getattr(args, "bandwidths", None):
        updates["bandwidths"] = _parse_floats(args.bandwidths,
                                              what="bandwidth")
    if getattr(args, "kernel_dims", None):
        updates["kernel_dims"] = tuple(
            d.strip() for d in args.kernel_dims.split(",") if d.strip())
    if getattr(args, "epsilon", None) is not None:
        updates["epsilon"] = args.epsilon
    if getattr(args, "pillar_cell", None) is not None:
        updates["pillar_cell"] = args.pillar_cell
    if getattr(args, "max_points", None) is not None:
        updates["max_points_n"] = args.max_points
    if getattr(args, "voxel_cell", None):
        updates["voxel_cell"] = _parse_floats(args.voxel_cell, 3, "voxel_cell")
    if getattr(args, "max_range", None) is not None:
        updates["max_range_m"] = args.max_range

    if updates:
        try:
            profile = replace(profile, **updates)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    corridor = None
    if file_cfg.get("corridor") is not None:
        corridor = _parse_roi(file_cfg["corridor"])
    if getattr(args, "corridor", None):
        corridor = _parse_roi(args.corridor)

    seed = int(file_cfg.get("seed", 0))
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    reduce = str(file_cfg.get("reduce", "mean"))
    if getattr(args, "reduce", None):
        reduce = args.reduce
    recall = int(file_cfg.get("recall_positions", 40))
    if getattr(args, "recall_positions", None) is not None:
        recall = args.recall_positions
    threads = int(file_cfg.get("threads",
                               os.environ.get("RADAR_MRF_THREADS", "1") or "1"))
    if getattr(args, "threads", None) is not None:
        threads = args.threads
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    return _Settings(profile, seed, reduce, threads, corridor, recall)


def _read_scan(path, profile: PipelineProfile):
    """Load a scan, checking any sidecar schema against the profile's."""
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"{path}: no such scan file")
    schema_path = Path(str(path)[:-len(path.suffix)] + ".schema.json") \
        if path.suffix else Path(str(path) + ".schema.json")
    if schema_path.exists():
        found = io.read_schema(schema_path)
        want = profile.schema
        if found.names != want.names:
            for i, (a, b) in enumerate(zip(found.names, want.names)):
                if a != b:
                    raise InputFormatError(
                        f"{schema_path}: field {i} is {a!r} but the profile "
                        f"expects {b!r}")
            raise InputFormatError(
                f"{schema_path}: has {len(found.names)} fields, profile "
                f"expects {len(want.names)}")
    return io.load_pointcloud(path, profile.schema)


def _encode_one(path, settings: _Settings, out_dir, append_density: bool) -> list[str]:
    profile = settings.profile
    pc = filter_roi(_read_scan(path, profile), profile.roi)
    stem = Path(path)
    stem = stem.with_name(stem.name[:-len(stem.suffix)] if stem.suffix
                          else stem.name)
    if out_dir is not None:
        stem = Path(out_dir) / stem.name

    field = kde_multiband(pc, profile.kde_configs())
    written = []
    d_bin, d_meta = io.write_density(stem, field.normalized, {
        "bandwidths": list(profile.bandwidths),
        "kernel_dims": list(profile.kernel_dims),
        "epsilon": profile.epsilon,
        "profile": profile.name,
    })
    written += [str(d_bin), str(d_meta)]

    h, w = canvas_shape(profile.roi, profile.pillar_cell, profile.pillar_cell)
    tensor = pillarize(pc, profile.pillar_config(seed=settings.seed),
                       densities=field if append_density else None)
    n_bands = len(profile.bandwidths) if append_density else 0
    p_bin, p_meta = io.write_pillars(stem, tensor, {
        "h": h, "w": w, "seed": settings.seed,
        "feature_names": list(pillar_feature_names(profile.schema, n_bands)),
        "profile": profile.name, "channel_meta": profile.channel_meta,
    })
    written += [str(p_bin), str(p_meta)]

    grid = voxelize(pc, field.normalized, profile.voxel_config(settings.reduce))
    v_path = io.write_voxels(stem, grid, {
        "reduce": settings.reduce, "bands": list(profile.bandwidths),
        "profile": profile.name, "channel_meta": profile.channel_meta,
    })
    written.append(str(v_path))
    return written


def cmd_encode(args) -> int:
    settings = _resolve_settings(args)
    failures = []

    def run(path):
        try:
            return path, _encode_one(path, settings, args.out_dir,
                                     args.append_density), None
        except Exception as exc:  # per-file diagnostics, keep going
            return path, None, exc

    if settings.threads > 1 and len(args.scans) > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            results = list(pool.map(run, args.scans))
    else:
        results = [run(p) for p in args.scans]

    for path, written, exc in results:
        if exc is None:
            print(f"{path}: wrote {len(written)} files")
        else:
            print(f"{path}: {exc}", file=sys.stderr)
            failures.append(exc)
    if not failures:
        return 0
    first = failures[0]
    if isinstance(first, InputFormatError):
        return 2
    if isinstance(first, ConfigError):
        return 3
    raise first


def cmd_kde_heatmap(args) -> int:
    settings = _resolve_settings(args)
    profile = settings.profile
    if args.resolution:
        h, w = _parse_shape(args.resolution)
    else:
        h, w = canvas_shape(profile.roi, profile.pillar_cell,
                            profile.pillar_cell)
    roi = profile.roi
    cell_x = (roi.x_max - roi.x_min) / w
    cell_y = (roi.y_max - roi.y_min) / h

    pc = filter_roi(_read_scan(args.scan, profile), roi)
    grid = np.zeros((h, w))
    if pc.n_points:
        field = kde_multiband(pc, profile.kde_configs())
        values = field.normalized.max(axis=1)
        cols = np.clip(((pc.xyz[:, 0] - roi.x_min) / cell_x).astype(np.int64),
                       0, w - 1)
        rows = np.clip(((pc.xyz[:, 1] - roi.y_min) / cell_y).astype(np.int64),
                       0, h - 1)
        acc = np.full((h, w), -np.inf)
        np.maximum.at(acc, (rows, cols), values)
        mask = acc > -np.inf
        grid[mask] = acc[mask]

    stem = args.out or str(Path(args.scan).with_suffix(""))
    pgm = Path(stem + ".pgm")
    csv = Path(stem + ".csv")
    io.write_pgm(pgm, grid)
    io.write_grid_csv(csv, grid)
    print(f"wrote {pgm} and {csv} ({h}x{w} cells, {cell_x:.3f}m x "
          f"{cell_y:.3f}m)")
    return 0


def cmd_assign(args) -> int:
    settings = _resolve_settings(args)
    profile = settings.profile
    if args.lattice:
        h, w = _parse_shape(args.lattice)
    else:
        full_h, full_w = profile.canvas
        h, w = full_h // 2, full_w // 2
    anchors = generate_anchors(profile.anchors, h, w, profile.roi)

    gts = io.read_labels(args.labels)
    frames = sorted({g.frame for g in gts})
    records = []
    for frame in frames:
        boxes = [replace(g.box, class_id=profile.class_id(g.class_name))
                 for g in gts if g.frame == frame]
        assignment = assign_targets(anchors, boxes, profile.anchors,
                                    iou_mode=args.iou)
        rec = {"frame": frame, "lattice": [h, w]}
        rec.update(assignment_record(assignment))
        records.append(rec)
    out = args.out or str(Path(args.labels).with_suffix("")) + ".assign.json"
    io.write_json(out, {"profile": profile.name, "frames": records})
    total = sum(r["n_pos"] for r in records)
    print(f"wrote {out} ({len(records)} frames, {total} positives)")
    return 0


def cmd_eval(args) -> int:
    settings = _resolve_settings(args)
    profile = settings.profile
    regions = {"all": None}
    if args.region == "corridor":
        regions = {"corridor": settings.corridor}
    elif args.region == "both":
        regions = {"all": None, "corridor": settings.corridor}
    cfg = profile.eval_config(recall_positions=settings.recall_positions,
                              regions=regions)
    dets = io.read_detections(args.detections)
    gts = io.read_labels(args.labels)
    report = evaluate(dets, gts, cfg)
    print(format_report(report))
    if args.out:
        io.write_json(args.out, report.to_dict())
        print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    settings = _resolve_settings(args)
    profile = settings.profile
    points = tuple(int(v) for v in _parse_floats(args.points, 2, "points"))
    clutter = tuple(int(v) for v in _parse_floats(args.clutter, 2, "clutter"))
    spec = make_scene_spec(
        profile.roi, n_objects=args.objects, points_range=points,
        clutter_range=clutter, cluster_std=args.std, seed=settings.seed,
        schema=profile.schema,
        class_ids={name: i for i, name in enumerate(profile.class_names)})
    pc, boxes, provenance = gen_scene(spec)
    stem = args.out_stem
    io.save_pointcloud(stem, pc)
    id_to_name = dict(enumerate(profile.class_names))
    io.write_labels(stem + ".labels.jsonl", [
        GroundTruth(frame="synth-0", class_name=id_to_name[b.class_id], box=b)
        for b in boxes])
    io.write_json(stem + ".provenance.json",
                  {"provenance": provenance.tolist()})
    print(f"wrote {stem}.bin ({pc.n_points} points, {len(boxes)} boxes)")
    return 0


def cmd_bench(args) -> int:
    settings = _resolve_settings(args)
    profile = settings.profile
    if args.reps < 1:
        raise ConfigError(f"repetitions must be >= 1, got {args.reps}")
    scans = []
    for entry in args.scans:
        p = Path(entry)
        if p.is_dir():
            scans.extend(sorted(p.glob("*.bin")))
        else:
            scans.append(p)
    scans = [s for s in scans if not str(s).endswith((".density.bin",
                                                     ".pillars.bin",
                                                     ".voxels.bin"))]
    if not scans:
        raise InputFormatError("no scan files to benchmark")

    report = {"profile": profile.name, "repetitions": args.reps, "scans": []}
    for scan in scans:
        pc = filter_roi(_read_scan(scan, profile), profile.roi)
        stages = {"kde": [], "pillarize": [], "voxelize": [], "total": []}
        kde_cfgs = profile.kde_configs()
        pillar_cfg = profile.pillar_config(seed=settings.seed)
        voxel_cfg = profile.voxel_config(settings.reduce)
        for _ in range(args.reps):
            t0 = time.perf_counter()
            field = kde_multiband(pc, kde_cfgs)
            t1 = time.perf_counter()
            pillarize(pc, pillar_cfg)
            t2 = time.perf_counter()
            voxelize(pc, field.normalized, voxel_cfg)
            t3 = time.perf_counter()
            stages["kde"].append(t1 - t0)
            stages["pillarize"].append(t2 - t1)
            stages["voxelize"].append(t3 - t2)
            stages["total"].append(t3 - t0)
        entry = {"scan": str(scan), "n_points": pc.n_points}
        for name, times in stages.items():
            ms = np.asarray(times) * 1e3
            entry[name] = {"median_ms": float(np.median(ms)),
                           "p95_ms": float(np.percentile(ms, 95))}
        report["scans"].append(entry)

    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        io.atomic_write_text(args.out, text + "\n")
    return 0


def _add_common(p: argparse.ArgumentParser, *, eval_extras: bool = False):
    p.add_argument("--profile", choices=list_profiles(), default=None,
                   help="named parameter set (default vod, or from --config)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--roi", default=None,
                   help="x_min,x_max,y_min,y_max,z_min,z_max override")
    p.add_argument("--bandwidths", default=None,
                   help="comma-separated kernel bandwidths in meters")
    p.add_argument("--kernel-dims", dest="kernel_dims", default=None,
                   help="comma-separated kernel feature names")
    p.add_argument("--epsilon", type=float, default=None,
                   help="variance guard for density normalization")
    p.add_argument("--pillar-cell", dest="pillar_cell", type=float,
                   default=None, help="pillar cell size in meters")
    p.add_argument("--max-points", dest="max_points", type=int, default=None,
                   help="points kept per pillar")
    p.add_argument("--voxel-cell", dest="voxel_cell", default=None,
                   help="voxel cell sizes cx,cy,cz in meters")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for subsampling / generation")
    p.add_argument("--reduce", choices=("mean", "max"), default=None,
                   help="per-voxel reduction")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default RADAR_MRF_THREADS or 1)")
    if eval_extras:
        p.add_argument("--max-range", dest="max_range", type=float,
                       default=None, help="drop boxes beyond this range in m")
        p.add_argument("--recall-positions", dest="recall_positions",
                       type=int, default=None,
                       help="number of sampled recall positions")
        p.add_argument("--corridor", default=None,
                       help="corridor region bounds, 6 comma-separated meters")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radar-mrf",
        description="Multi-representation radar point-cloud preprocessing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode",
                       help="write density, pillar, and voxel artifacts")
    p.add_argument("scans", nargs="+", help="input .bin scan files")
    p.add_argument("--out-dir", default=None, help="artifact directory")
    p.add_argument("--append-density", action="store_true",
                   help="append density columns to pillar features")
    _add_common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("kde-heatmap",
                       help="BEV grid of max normalized density (PGM + CSV)")
    p.add_argument("scan", help="input .bin scan file")
    p.add_argument("--resolution", default=None, help="grid as HxW")
    p.add_argument("--out", default=None, help="output stem")
    _add_common(p)
    p.set_defaults(func=cmd_kde_heatmap)

    p = sub.add_parser("assign", help="anchor target assignment from labels")
    p.add_argument("labels", help="ground-truth JSONL file")
    p.add_argument("--lattice", default=None,
                   help="anchor lattice as HxW (default half canvas)")
    p.add_argument("--iou", choices=("bev", "3d"), default="bev",
                   help="overlap used for matching")
    p.add_argument("--out", default=None, help="output JSON path")
    _add_common(p)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("eval", help="average-precision report")
    p.add_argument("detections", help="detections JSONL file")
    p.add_argument("labels", help="ground-truth JSONL file")
    p.add_argument("--region", choices=("all", "corridor", "both"),
                   default="all")
    p.add_argument("--out", default=None, help="report JSON path")
    _add_common(p, eval_extras=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    p.add_argument("out_stem", help="output stem for .bin/.schema/labels")
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--points", default="20,60",
                   help="per-object point count range lo,hi")
    p.add_argument("--clutter", default="50,120",
                   help="clutter point count range lo,hi")
    p.add_argument("--std", type=float, default=0.35,
                   help="intra-cluster standard deviation in meters")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time the preprocessing stages")
    p.add_argument("scans", nargs="+", help="scan files or directories")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--out", default=None, help="timing report JSON path")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
