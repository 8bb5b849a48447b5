"""Command-line front end: `orthosplat run`, `render-tdom`, and `metrics`."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .gaussian_field import load_checkpoint
from .pipeline import AUTO_GSD_PIXELS, RunOptions, run_pipeline
from .splat_render import OrthoViewBox
from .tdom import derive_view_box, render_tdom, write_geo_outputs


def _parse_gsd(value: str) -> float | None:
    if value.upper() == "AUTO":
        return None
    gsd = float(value)
    if gsd <= 0:
        raise argparse.ArgumentTypeError("gsd must be positive")
    return gsd


def _parse_box(value: str) -> tuple[float, ...]:
    parts = [float(v) for v in value.split(",")]
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("box must be l,r,b,t,zn,zf")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthosplat",
        description="Incremental true-orthophoto engine over streamed 3D Gaussian splatting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="replay a scene and emit a TDOM per frame")
    run_p.add_argument("--scene", required=True, help="directory with cameras/images/points3D.txt")
    run_p.add_argument("--images", required=True, help="directory with the image files")
    run_p.add_argument("--order", default=None, help="optional replay-order manifest")
    run_p.add_argument("--init-frames", type=int, default=3)
    run_p.add_argument("--init-iters", type=int, default=2000)
    run_p.add_argument("--per-frame-iters", type=int, default=200)
    run_p.add_argument("--gm", type=float, default=0.1)
    run_p.add_argument("--ht", type=int, default=16)
    run_p.add_argument("--gsd", type=_parse_gsd, default="AUTO")
    run_p.add_argument("--up-axis", choices=("x", "y", "z"), default="z")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--threads", type=int, default=None)
    run_p.add_argument("--out", default="orthosplat_out")
    run_p.add_argument("--prune", choices=("on", "off"), default="on")
    run_p.add_argument("--seed-cap", type=int, default=50_000)

    render_p = sub.add_parser("render-tdom", help="render a TDOM from a checkpoint")
    render_p.add_argument("--checkpoint", required=True)
    render_p.add_argument("--gsd", type=_parse_gsd, default="AUTO")
    render_p.add_argument("--box", type=_parse_box, default=None, help="l,r,b,t,zn,zf")
    render_p.add_argument("--up-axis", choices=("x", "y", "z"), default="z")
    render_p.add_argument("--out", required=True)

    metrics_p = sub.add_parser("metrics", help="summarize a run's metrics records")
    metrics_p.add_argument("--out", required=True, help="run output directory")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    threads = args.threads
    if threads is None:
        env = os.environ.get("ORTHOSPLAT_THREADS")
        threads = int(env) if env else None
    opts = RunOptions(
        scene_dir=args.scene,
        images_dir=args.images,
        out_dir=args.out,
        order=args.order,
        init_frames=args.init_frames,
        init_iters=args.init_iters,
        per_frame_iters=args.per_frame_iters,
        g_m=args.gm,
        h_t=args.ht,
        gsd=args.gsd,
        up_axis=args.up_axis,
        seed=args.seed,
        threads=threads,
        prune=args.prune == "on",
        seed_cap=args.seed_cap,
    )
    result = run_pipeline(opts)
    print(f"{len(result.reports)} frames processed; checkpoint at {result.checkpoint_path}")
    return 0


def _cmd_render_tdom(args: argparse.Namespace) -> int:
    field = load_checkpoint(args.checkpoint)
    if args.box is not None:
        l, r, b, t, z_n, z_f = args.box
        box = OrthoViewBox(l, r, b, t, z_n, z_f, args.up_axis)
    else:
        box = derive_view_box(field.means, up_axis=args.up_axis)
    gsd = args.gsd if args.gsd is not None else (box.r - box.l) / AUTO_GSD_PIXELS
    raster = render_tdom(field, box, gsd)
    png_path, pgw_path = write_geo_outputs(raster, Path(args.out).with_suffix(""))
    print(f"wrote {png_path} and {pgw_path}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    metrics_path = Path(args.out) / "metrics.jsonl"
    records = []
    for line in metrics_path.read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    if not records:
        print("no metrics records found")
        return 1
    total = sum(rec["adopt_seconds"] for rec in records)
    fps = len(records) / total if total > 0 else float("inf")
    rows = [
        ("frames", f"{len(records)}"),
        ("mean Ad-opt (s)", f"{total / len(records):.3f}"),
        ("FPS", f"{fps:.3f}"),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "render-tdom":
            return _cmd_render_tdom(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
