"""Command-line entry point: ``legassist <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, LegAssistError
from .geometry import FrameId, RigidTransform, load_transforms

log = logging.getLogger("legassist")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    from .raster import write_pgm, write_scans
    from .sim import gen_protocol_trials, gen_training_set

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "protocol":
        trials = gen_protocol_trials(args.seed)
        write_scans(out / "scans.jsonl", [t.scan for t in trials])
        truth = [{"scenario": t.scenario, "location": t.location,
                  "legs": [[c.x, c.y] for c in t.truth.leg_centers],
                  "visible_legs": [[c.x, c.y] for c in t.truth.visible_centers],
                  "clutter": len(t.scene.clutter)} for t in trials]
        (out / "truth.json").write_text(_dump({"seed": args.seed, "trials": truth}))
        for i, t in enumerate(trials):
            write_pgm(out / f"mask_{i:04d}.pgm", t.truth.mask)
    elif args.kind == "training":
        pairs = gen_training_set(args.n, args.seed)
        for i, (grid, mask) in enumerate(pairs):
            write_pgm(out / f"grid_{i:04d}.pgm", grid.pixels)
            write_pgm(out / f"mask_{i:04d}.pgm", mask)
        (out / "manifest.json").write_text(_dump({"seed": args.seed, "n": args.n}))
    else:
        from .loop import simulate_walk
        scans, odom, truth = simulate_walk(args.speed, args.stride, args.duration, args.seed)
        with open(out / "scans.jsonl", "w") as fh:
            for scan, pose in zip(scans, odom):
                rec = scan.to_json()
                rec["odom"] = list(pose)
                fh.write(json.dumps(rec) + "\n")
        (out / "truth.json").write_text(_dump(truth))
        from .sim import DEFAULT_LASER_POSE
        (out / "frames.json").write_text(_dump([DEFAULT_LASER_POSE.to_json()]))
    print(f"wrote simulation ({args.kind}) to {out}")
    return 0


def cmd_rasterize(args) -> int:
    from .raster import rasterize, read_scans, write_grid

    scans = read_scans(args.input)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(scans):
        write_grid(out / f"grid_{i:04d}.pgm", rasterize(scan))
    print(f"rasterized {len(scans)} scans into {out}")
    return 0


def _load_dataset(data_dir: Path):
    from .raster import OccupancyGrid, read_grid, read_pgm

    grids = sorted(data_dir.glob("grid_*.pgm"))
    if not grids:
        raise FormatError(f"no grid_*.pgm files in {data_dir}")
    pairs = []
    for g in grids:
        mask_path = g.with_name(g.name.replace("grid_", "mask_"))
        if not mask_path.exists():
            raise FormatError(f"missing mask for {g.name}")
        grid = read_grid(g)
        mask = read_pgm(mask_path)
        if mask.shape != grid.pixels.shape:
            raise FormatError(f"mask {mask_path.name} has shape {mask.shape}, grid {grid.pixels.shape}")
        pairs.append((OccupancyGrid(grid.pixels, grid.spec), mask))
    return pairs


def _train_configs(path: str | None, seed: int | None):
    from .nn import TrainConfig, UNetConfig

    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON in {path}: {exc.msg}", exc.lineno, "line") from None
    unet_keys = {f.name for f in fields(UNetConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - unet_keys - train_keys
    if unknown:
        raise FormatError(f"unknown config keys {sorted(unknown)} in {path}")
    ucfg = UNetConfig(**{k: v for k, v in raw.items() if k in unet_keys})
    tcfg = TrainConfig(**{k: v for k, v in raw.items() if k in train_keys})
    if seed is not None:
        tcfg = replace(tcfg, seed=seed)
    return ucfg, tcfg


def cmd_train(args) -> int:
    from .nn import save_model, train
    from .sim import gen_training_set

    ucfg, tcfg = _train_configs(args.config, args.seed)
    if args.data:
        data = _load_dataset(Path(args.data))
    else:
        data = gen_training_set(args.synthetic, tcfg.seed)
    res = train(data, ucfg, tcfg)
    save_model(args.out, res.model)
    hist = Path(args.out).with_suffix(".history.json")
    hist.write_text(_dump({"loss": res.loss_history, "pos_weight": res.pos_weight}))
    print(f"trained {len(res.loss_history)} steps, final loss {res.loss_history[-1]:.5f} -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    from .nn import load_model, unet_forward, write_mask
    from .raster import read_grid

    grid = read_grid(args.input)
    model = load_model(args.model, grid.spec.matrix_length)  # fully convolutional: any 2^k size
    mask = unet_forward(grid, model, args.threshold)
    write_mask(args.out, mask)
    print(f"mask written to {args.out} ({int(mask.binary().sum())} leg pixels)")
    return 0


def _segmenter(model_path: str | None, threshold: float):
    from .nn import load_model
    from .pipeline import baseline_segment, model_segmenter

    if model_path:
        return model_segmenter(load_model(model_path), threshold), Path(model_path).name
    return baseline_segment, "baseline"


def cmd_gait(args) -> int:
    from .blobs import LegObservation
    from .gait import estimate_gait, track_legs
    from .geometry import Point3, transform_point
    from .pipeline import perceive
    from .raster import scan_from_json

    transforms = load_transforms(args.transforms)
    try:
        laser_to_base = transforms[(FrameId.LASER, FrameId.ROBOT_BASE)]
    except KeyError:
        raise FormatError(f"{args.transforms} has no L -> R transform") from None
    segment, _ = _segmenter(args.model, args.threshold)
    observations: list[LegObservation] = []
    with open(args.scans) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                scan = scan_from_json(rec)
                odom = rec.get("odom")
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad scan record: {exc}", lineno, "line") from None
            obs = perceive(scan, segment, laser_to_base).robot
            if odom is not None and obs.valid:
                m = RigidTransform.planar(odom[0], odom[1], odom[2], FrameId.ROBOT_BASE, FrameId.ROBOT_BASE)
                obs = replace(obs, left=transform_point(Point3(*obs.left), m),
                              right=transform_point(Point3(*obs.right), m))
            observations.append(obs)
    report = estimate_gait(track_legs(observations))
    Path(args.out).write_text(_dump(report.to_json()))
    print(f"stride length {report.stride_length:.3f} m, stride velocity "
          f"{report.stride_velocity:.3f} m/s, cadence {report.cadence:.3f} /s")
    return 0


def cmd_follow(args) -> int:
    from .control import ControllerConfig
    from .loop import initial_state, run_follow

    segment, _ = _segmenter(args.model, args.threshold)
    cfg = ControllerConfig(standoff=args.standoff)
    state = initial_state(args.speed, args.stride, args.standoff, seed=args.seed)
    result = run_follow(state, segment, args.duration, cfg=cfg)
    result.write_jsonl(args.out)
    d = np.array(result.distances)
    t = np.array(result.times)
    late = d[t >= 5.0] if (t >= 5.0).any() else d
    print(f"{len(d)} steps; person-robot distance after 5 s: "
          f"{late.min():.3f}..{late.max():.3f} m (standoff {args.standoff} m)")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import format_table, reports_to_json, run_protocol
    from .pipeline import baseline_segment
    from .sim import gen_protocol_trials

    trials = gen_protocol_trials(args.seed)
    reports = [run_protocol(baseline_segment, trials, name="baseline", seed=args.seed)]
    if args.model:
        segment, name = _segmenter(args.model, args.threshold)
        reports.append(run_protocol(segment, trials, name=name, seed=args.seed))
    text = reports_to_json(reports) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(format_table(reports))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="legassist", description="Laser leg detection, gait and following pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate synthetic scans, masks or training pairs")
    s.add_argument("--kind", choices=("protocol", "training", "walk"), default="protocol")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n", type=int, default=100, help="training pairs (kind=training)")
    s.add_argument("--speed", type=float, default=0.5, help="m/s (kind=walk)")
    s.add_argument("--stride", type=float, default=1.0, help="m (kind=walk)")
    s.add_argument("--duration", type=float, default=10.0, help="s (kind=walk)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rasterize", help="scan log (JSONL) to occupancy-grid PGMs")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("train", help="train the segmentation network")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of grid_XXXX.pgm / mask_XXXX.pgm pairs")
    src.add_argument("--synthetic", type=int, help="generate this many training pairs in memory")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON with TrainConfig / UNetConfig fields")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment legs in one grid")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("gait", help="stride parameters from a scan log")
    s.add_argument("--scans", required=True)
    s.add_argument("--model", help="segmentation model; the classical baseline when omitted")
    s.add_argument("--transforms", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_gait)

    s = sub.add_parser("follow", help="closed-loop person following in simulation")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="segmentation model; the classical baseline when omitted")
    s.add_argument("--speed", type=float, default=0.5)
    s.add_argument("--stride", type=float, default=1.0)
    s.add_argument("--standoff", type=float, default=0.6)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_follow)

    s = sub.add_parser("eval", help="detection / false-positive protocol vs the baseline")
    s.add_argument("--model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LegAssistError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
