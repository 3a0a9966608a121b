"""Command-line entry point.

Subcommands: run (full pipeline), plan (print the view plan), eval
(fid / kid / bt / render), export (remesh + color transfer from a saved
field). Exit codes: 0 ok, 2 configuration or input error, 3 painter
failure, 4 fusion failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from repaint3d.fusion import FusionError
from repaint3d.geometry import FRAMING_RADIUS, GeometryError
from repaint3d.metrics import (EvalError, bradley_terry, fid, kid,
                               read_features, read_votes, render_eval_views)
from repaint3d.pipeline import (ConfigError, PipelineConfig, load_field,
                                plan_views, run_pipeline)
from repaint3d.protocol import PainterError, ProtocolError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PAINTER = 3
EXIT_FUSION = 4


def _add_plan_options(parser):
    parser.add_argument("--views", type=int, default=9,
                        help="number of views in the fan (default 9)")
    parser.add_argument("--increment", type=float, default=40.0,
                        help="azimuth increment in degrees (default 40)")
    parser.add_argument("--facade", type=int, default=5,
                        help="views painted before the first fusion (default 5)")
    parser.add_argument("--resolution", type=int, default=512)
    parser.add_argument("--radius", type=float, default=FRAMING_RADIUS,
                        help="camera distance from the normalized asset")
    parser.add_argument("--fov", type=float, default=60.0,
                        help="vertical field of view in degrees")
    parser.add_argument("--elevation", type=float, default=0.0)


def _config_from_args(args) -> PipelineConfig:
    consistency = getattr(args, "consistency", "builtin")
    # the CLI accepts the short external: spelling for consistency too
    if consistency.startswith("external:"):
        consistency = "external-nerf:" + consistency[len("external:"):]
    return PipelineConfig(
        prompt_object=getattr(args, "prompt", "object"),
        prompt_modifier=getattr(args, "modifier", None),
        n_views=args.views,
        increment_deg=args.increment,
        n_facade=args.facade,
        elevation=args.elevation,
        fov_y=args.fov,
        resolution=args.resolution,
        camera_radius=args.radius,
        zoning=not getattr(args, "no_zoning", False),
        painter=getattr(args, "painter", "procedural"),
        consistency=consistency,
        seed=getattr(args, "seed", 0),
        init_mode=getattr(args, "init_mode", "auto"),
        init_retries=getattr(args, "init_retries", 0),
        target_edge=getattr(args, "target_edge", 0.05),
        export_format=getattr(args, "format", "ply"),
        painter_timeout=getattr(args, "timeout", 300.0),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repaint3d",
        description="Text-guided repainting of 3D assets.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full repainting pipeline")
    run.add_argument("--input", required=True, help="mesh or point cloud file")
    run.add_argument("--prompt", required=True,
                     help="object name for prompt construction")
    run.add_argument("--modifier", default=None,
                     help="optional prompt modifier (material, color, ...)")
    _add_plan_options(run)
    run.add_argument("--painter", default="procedural",
                     help="procedural | masked-diffusion | external:\"cmd {dir}\"")
    run.add_argument("--consistency", default="builtin",
                     help="builtin | external-nerf:\"cmd {dir}\"")
    run.add_argument("--no-zoning", action="store_true",
                     help="disable keep/refine/generate zoning")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--init-mode", default="auto",
                     choices=("auto", "interactive", "seed-retry"),
                     help="first-view confirmation mode")
    run.add_argument("--init-retries", type=int, default=0,
                     help="seed-retry regeneration budget")
    run.add_argument("--target-edge", type=float, default=0.05,
                     help="remeshing target edge length for export")
    run.add_argument("--format", default="ply", choices=("ply", "obj"),
                     help="export format")
    run.add_argument("--timeout", type=float, default=300.0,
                     help="painter / consistency tool timeout in seconds")
    run.add_argument("--out", required=True, help="output directory")

    plan = sub.add_parser("plan", help="print the view plan as JSON")
    _add_plan_options(plan)

    evaluate = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = evaluate.add_subparsers(dest="metric", required=True)
    fid_p = eval_sub.add_parser("fid", help="Frechet distance of two feature files")
    fid_p.add_argument("--a", required=True)
    fid_p.add_argument("--b", required=True)
    kid_p = eval_sub.add_parser("kid", help="kernel distance of two feature files")
    kid_p.add_argument("--a", required=True)
    kid_p.add_argument("--b", required=True)
    kid_p.add_argument("--subsets", type=int, default=100)
    kid_p.add_argument("--subset-size", type=int, default=1000)
    kid_p.add_argument("--seed", type=int, default=0)
    bt_p = eval_sub.add_parser("bt", help="Bradley-Terry scores from votes")
    bt_p.add_argument("--votes", required=True,
                      help="CSV of winner,loser per line")
    render_p = eval_sub.add_parser("render",
                                   help="render the 8-view evaluation ring")
    render_p.add_argument("--input", required=True, help="colored mesh file")
    render_p.add_argument("--out", required=True)
    render_p.add_argument("--resolution", type=int, default=512)
    render_p.add_argument("--radius", type=float, default=FRAMING_RADIUS)

    export = sub.add_parser(
        "export", help="remesh and export a colored asset from a saved field")
    export.add_argument("--input", required=True, help="mesh file")
    export.add_argument("--field", required=True,
                        help="field directory from a pipeline run")
    export.add_argument("--out", required=True, help="output .ply or .obj")
    export.add_argument("--target-edge", type=float, default=0.05)
    return parser


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result = run_pipeline(cfg, args.input, args.out)
    print(json.dumps({
        "out": str(Path(args.out)),
        "asset": str(result.export_path),
        "manifest": str(result.manifest_path),
        "views": len(result.views),
    }, indent=2))
    return EXIT_OK


def _cmd_plan(args) -> int:
    cfg = _config_from_args(args)
    print(json.dumps(plan_views(cfg).as_dict(), indent=2))
    return EXIT_OK


def _cmd_eval(args) -> int:
    if args.metric == "fid":
        value = fid(read_features(args.a), read_features(args.b))
        print(json.dumps({"fid": value}))
    elif args.metric == "kid":
        mean, std = kid(read_features(args.a), read_features(args.b),
                        subsets=args.subsets, subset_size=args.subset_size,
                        seed=args.seed)
        print(json.dumps({"kid_mean": mean, "kid_std": std}))
    elif args.metric == "bt":
        result = bradley_terry(read_votes(args.votes))
        print(json.dumps({
            "items": list(result.items),
            "scores": [float(s) for s in result.scores],
            "ci": [float(c) for c in result.ci],
        }, indent=2))
    else:
        from repaint3d.meshio import load_mesh

        paths = render_eval_views(load_mesh(args.input), args.out,
                                  radius=args.radius,
                                  resolution=args.resolution)
        print(json.dumps({"images": [str(p) for p in paths]}, indent=2))
    return EXIT_OK


def _cmd_export(args) -> int:
    from repaint3d.meshio import load_mesh
    from repaint3d.remesh import export_colored, remesh_planar, transfer_colors

    mesh = load_mesh(args.input)
    field = load_field(args.field)
    remeshed = remesh_planar(mesh, target_edge=args.target_edge)
    colored = transfer_colors(remeshed, field)
    export_colored(colored, args.out)
    print(json.dumps({"asset": str(Path(args.out)),
                      "vertices": len(colored.vertices),
                      "faces": len(colored.faces)}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "plan": _cmd_plan, "eval": _cmd_eval,
                "export": _cmd_export}
    try:
        return handlers[args.command](args)
    except FusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FUSION
    except (PainterError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PAINTER
    except (ConfigError, EvalError, GeometryError, ValueError,
            FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
