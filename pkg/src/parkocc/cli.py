"""Command-line entry point: ``parkocc <subcommand> ...``.

Subcommands mirror the pipeline stages: generate -> (remap) -> fuse ->
downsample -> eval, plus export for inspection. Settings come from an optional
``key = value`` file (``--config``) overridden by flags. Every run writes
``manifest_<subcommand>.txt`` next to its outputs, and the exit status is 0
iff no error was logged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, kitti_io
from .config import config_hash, load_kv
from .downsample import DownsampleConfig, downsample
from .errors import ParkoccError, ParseError
from .export import export_grid
from .metrics import ConfusionCounts, confusion, default_classes, format_table, report, report_json
from .semantics import default_remap_table, load_remap_table, remap
from .synthgen import EgoPose, Trajectory, builtin_parking_lot, generate_sequence, load_scene
from .voxel import GridSpec, fuse, fusion_settings

log = logging.getLogger("parkocc")


class _ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


def write_manifest(out_dir, subcommand, inputs: dict, settings: dict, counters: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        "tool = parkocc",
        f"version = {__version__}",
        f"subcommand = {subcommand}",
    ]
    lines += [f"input.{k} = {v}" for k, v in inputs.items()]
    lines.append(f"config_hash = {config_hash(settings)}")
    lines += [f"config.{k} = {_fmt(v)}" for k, v in sorted(settings.items())]
    lines += [f"counter.{k} = {v}" for k, v in counters.items()]
    path = out_dir / f"manifest_{subcommand}.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _settings(args, keys) -> dict:
    """Config-file values overridden by any flag the user actually gave."""
    values = load_kv(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _grid_spec(settings) -> GridSpec:
    return fusion_settings(settings)[1]


def parse_frame_range(text: str | None, n: int) -> range:
    if not text:
        return range(n)
    if ":" in text:
        a, b = text.split(":", 1)
        return range(int(a) if a else 0, int(b) if b else n)
    i = int(text)
    return range(i, i + 1)


def load_trajectory(path) -> Trajectory:
    poses = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) not in (2, 3):
            raise ParseError(path, line_no, "expected 'x y [yaw]'")
        try:
            poses.append(EgoPose(*(float(t) for t in tokens)))
        except ValueError:
            raise ParseError(path, line_no, "non-numeric value") from None
    return Trajectory(poses)


def load_classes(path) -> list[int]:
    classes = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            classes.append(int(tokens[0]))
        except ValueError:
            raise ParseError(path, line_no, f"non-integer class id {tokens[0]!r}") from None
    return classes


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> None:
    s = _settings(args, ["seed", "region", "frames", "threads"])
    seed = int(s.get("seed", 0))
    region = int(s.get("region", 0))
    threads = int(s.get("threads", 1))
    frames = s.get("frames")
    if args.scene:
        if not args.trajectory:
            raise ParkoccError("--scene needs --trajectory")
        scene = load_scene(args.scene)
        trajectory = load_trajectory(args.trajectory)
        table = load_remap_table(args.remap) if args.remap else None
        source = {"scene": args.scene, "trajectory": args.trajectory}
    else:
        n_frames = int(frames) if frames is not None else 40
        scene, trajectories = builtin_parking_lot(seed, frames_per_region=max(n_frames, 1))
        if not 0 <= region < len(trajectories):
            raise ParkoccError(f"region {region} outside 0..{len(trajectories) - 1}")
        trajectory = trajectories[region]
        table = load_remap_table(args.remap) if args.remap else default_remap_table()
        source = {"scene": "builtin", "remap": args.remap or "default"}
    if frames is not None:
        trajectory = trajectory[: int(frames)]
    result = generate_sequence(scene, trajectory, out=args.out, remap_table=table, threads=threads)
    log.info("wrote %d frames to %s", len(result), args.out)
    counters = {"frames": len(result)}
    counters.update({f"points.{kitti_io.frame_name(i)}": n for i, n in enumerate(result.point_counts)})
    write_manifest(args.out, "generate", source, {"seed": seed, "region": region, "frames": len(result)}, counters)


def cmd_fuse(args) -> None:
    s = _settings(args, ["prior_scan", "past_scan", "threads"])
    config, spec = fusion_settings(s)
    threads = int(s.get("threads", 1))
    seq = kitti_io.SequenceDir(args.sequence)
    n = len(seq)
    if n == 0:
        raise ParkoccError(f"{args.sequence}: no point clouds under velodyne/")
    out = Path(args.out) if args.out else seq.root / "voxels"
    out.mkdir(parents=True, exist_ok=True)
    written = failed = truncated = 0
    for t in parse_frame_range(args.frames, n):
        try:
            grid = fuse(t, seq, config, spec, threads=threads)
        except (ParkoccError, OSError) as e:
            log.error("frame %d skipped: %s", t, e)
            failed += 1
            continue
        truncated += grid.truncated
        kitti_io.write_voxel_labels(grid, out / f"{kitti_io.frame_name(t)}.label")
        written += 1
    effective = {
        "prior_scan": config.prior_scan,
        "past_scan": config.past_scan,
        "dims": spec.dims,
        "voxel_size": spec.voxel_size,
        "origin": spec.origin,
    }
    write_manifest(
        out,
        "fuse",
        {"sequence": args.sequence, "frames": args.frames or "all"},
        effective,
        {"written": written, "failed": failed, "truncated_windows": truncated},
    )


def _grid_files(directory, ext):
    return {p.stem: p for p in sorted(Path(directory).glob(f"*{ext}")) if p.stem.isdigit()}


def cmd_downsample(args) -> None:
    s = _settings(args, ["threshold"])
    config = DownsampleConfig(int(s.get("threshold", 8)))
    spec = _grid_spec(s)
    out = Path(args.out) if args.out else Path(args.voxels)
    out.mkdir(parents=True, exist_ok=True)
    written = failed = 0
    for stem, path in _grid_files(args.voxels, ".label").items():
        try:
            occ = downsample(kitti_io.read_voxel_labels(path, spec.dims), config)
        except (ParkoccError, OSError) as e:
            log.error("%s skipped: %s", path, e)
            failed += 1
            continue
        kitti_io.write_occupancy(occ, out / f"{stem}.occ")
        written += 1
    write_manifest(
        out, "downsample", {"voxels": args.voxels}, {"threshold": config.threshold, "dims": spec.dims},
        {"written": written, "failed": failed},
    )


def cmd_remap(args) -> None:
    table = load_remap_table(args.table) if args.table else default_remap_table()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = unmapped_total = 0
    for path in sorted(Path(args.labels).glob("*.label")):
        try:
            sem, inst = kitti_io.read_labels(path, return_instance=True)
        except (ParkoccError, OSError) as e:
            log.error("%s skipped: %s", path, e)
            continue
        new, n_unmapped = remap(sem, table)
        if n_unmapped:
            log.warning("%s: %d labels had no table entry", path.name, n_unmapped)
        unmapped_total += n_unmapped
        kitti_io.write_labels(new, out / path.name, inst)
        written += 1
    write_manifest(
        out, "remap", {"labels": args.labels, "table": args.table or "default"},
        {"default_target": table.default_target}, {"written": written, "unmapped": unmapped_total},
    )


def cmd_eval(args) -> None:
    s = _settings(args, [])
    spec = _grid_spec(s)
    ext = ".occ" if args.occupancy else ".label"
    pred = _grid_files(args.pred, ext)
    gt = _grid_files(args.gt, ext)
    only_pred = sorted(set(pred) - set(gt))
    only_gt = sorted(set(gt) - set(pred))
    if only_pred or only_gt:
        log.error("frame sets differ: only in pred %s, only in gt %s", only_pred, only_gt)
    total = ConfusionCounts()
    evaluated = 0
    for stem in sorted(set(pred) & set(gt)):
        try:
            if args.occupancy:
                p = kitti_io.read_occupancy(pred[stem], spec.halved().dims)
                g = kitti_io.read_occupancy(gt[stem], spec.halved().dims)
            else:
                p = kitti_io.read_voxel_labels(pred[stem], spec.dims)
                g = kitti_io.read_voxel_labels(gt[stem], spec.dims)
            total = total + confusion(p, g)
        except (ParkoccError, OSError) as e:
            log.error("frame %s: %s", stem, e)
            continue
        evaluated += 1
    if evaluated == 0:
        raise ParkoccError("no frames could be evaluated")
    classes = load_classes(args.classes) if args.classes else None
    if classes is None and args.include_empty:
        classes = default_classes(total, include_empty=True)
    rep = report(total, classes, args.policy)
    rep["frames"] = evaluated
    print(format_table(rep))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report_json(rep) + "\n")
    write_manifest(
        report_path.parent, "eval", {"pred": args.pred, "gt": args.gt, "classes": args.classes or "present"},
        {"policy": args.policy, "occupancy": args.occupancy, "include_empty": args.include_empty},
        {"frames": evaluated, "missing": len(only_pred) + len(only_gt)},
    )


def cmd_export(args) -> None:
    s = _settings(args, [])
    spec = _grid_spec(s)
    occupancy = Path(args.grid).suffix == ".occ"
    if occupancy:
        spec = spec.halved()
        labels = kitti_io.read_occupancy(args.grid, spec.dims)
    else:
        labels = kitti_io.read_voxel_labels(args.grid, spec.dims)
    n_vertices, n_faces = export_grid(labels, spec, args.mesh, occupancy=occupancy)
    log.info("wrote %d vertices, %d triangles to %s", n_vertices, n_faces, args.mesh)
    write_manifest(
        Path(args.mesh).parent, "export", {"grid": args.grid},
        {"dims": spec.dims, "voxel_size": spec.voxel_size, "origin": spec.origin},
        {"vertices": n_vertices, "faces": n_faces},
    )


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parkocc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key = value settings file (flags win)")
        return p

    p = add("generate", cmd_generate, "ray-cast a synthetic sequence")
    p.add_argument("--out", required=True, help="sequence directory to create")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--builtin", action="store_true", help="builtin garage (default)")
    src.add_argument("--scene", help="scene file: 'box cx cy cz ex ey ez label' / 'plane z label'")
    p.add_argument("--trajectory", help="trajectory file, 'x y [yaw]' per line (with --scene)")
    p.add_argument("--region", type=int, help="builtin region 0-21")
    p.add_argument("--frames", type=int, help="number of frames")
    p.add_argument("--seed", type=int)
    p.add_argument("--remap", help="remap table applied to primitive ids")
    p.add_argument("--threads", type=int)

    p = add("fuse", cmd_fuse, "multi-frame fusion into semantic voxel grids")
    p.add_argument("sequence")
    p.add_argument("--frames", help="target frames, 'a:b' (end exclusive) or a single index")
    p.add_argument("--prior", dest="prior_scan", type=int)
    p.add_argument("--past", dest="past_scan", type=int)
    p.add_argument("--out", help="output directory (default <sequence>/voxels)")
    p.add_argument("--threads", type=int)

    p = add("downsample", cmd_downsample, "semantic grids -> class-agnostic occupancy")
    p.add_argument("voxels")
    p.add_argument("--threshold", type=int)
    p.add_argument("--out", help="output directory (default: alongside inputs)")

    p = add("remap", cmd_remap, "rewrite label files through a remap table")
    p.add_argument("labels")
    p.add_argument("--table", help="remap table (default: builtin simulator table)")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "score predicted grids against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--classes", help="file listing class ids for mIoU")
    p.add_argument("--occupancy", action="store_true", help="evaluate .occ grids instead of .label")
    p.add_argument("--include-empty", action="store_true", help="count class 0 in mIoU")
    p.add_argument("--policy", choices=("exclude", "zero"), default="exclude")
    p.add_argument("--report", default="eval_report.json")

    p = add("export", cmd_export, "write a grid as a colored PLY mesh")
    p.add_argument("grid")
    p.add_argument("mesh")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    root = logging.getLogger()
    counter = _ErrorCounter()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.addHandler(counter)
    old_level = root.level
    root.setLevel(level)
    try:
        args.func(args)
    except (ParkoccError, OSError) as e:
        log.error("%s", e)
    finally:
        root.removeHandler(handler)
        root.removeHandler(counter)
        root.setLevel(old_level)
    return 1 if counter.count else 0


if __name__ == "__main__":
    sys.exit(main())
