#!/usr/bin/env python3
"""Drive the pipeline with a custom painter over the file protocol.

The same script plays both sides: by default it runs the pipeline with
`external:python3 <this file> --serve {dir}` as the painter command, and in
--serve mode it answers a single request directory the way any out-of-process
painter would (read meta.json/depth.png/mask.png, write color.png, then
done.json last).

The painter here shades by view depth, so the repainted object comes out
fog-banded rather than matching any target; kept pixels are copied from the
remapped image, which is what keeps the views mutually consistent.

    python3 demos/external_painter.py --out /tmp/painter_demo
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from repaint3d.geometry import normalize
from repaint3d.meshio import save_ply
from repaint3d.pipeline import PipelineConfig, run_pipeline
from repaint3d.protocol import read_request, write_response
from repaint3d.shapes import make_icosphere


def serve(dirpath: Path) -> None:
    request = read_request(dirpath)
    visible = np.isfinite(request.depth)
    color = np.zeros(request.depth.shape + (3,))
    if visible.any():
        d = request.depth[visible]
        t = (d - d.min()) / max(d.max() - d.min(), 1e-9)
        # warm near, cool far
        color[visible] = np.stack([1.0 - 0.6 * t, 0.4 + 0.2 * t, 0.3 + 0.7 * t],
                                  axis=-1)
    if request.remap is not None:
        keep = request.mask == 0
        color[keep] = request.remap[keep]
    write_response(dirpath, color, painter_id="depth-fog-demo")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--serve", type=Path, default=None,
                        help="answer one request directory and exit")
    parser.add_argument("--out", type=Path, default=Path("out/external_painter"))
    parser.add_argument("--resolution", type=int, default=192)
    args = parser.parse_args()

    if args.serve is not None:
        serve(args.serve)
        return

    mesh = normalize(make_icosphere(3))
    args.out.mkdir(parents=True, exist_ok=True)
    input_path = args.out / "input.ply"
    save_ply(input_path, mesh)

    command = f"external:{sys.executable} {Path(__file__).resolve()} --serve {{dir}}"
    cfg = PipelineConfig(prompt_object="sphere", painter=command,
                         resolution=args.resolution, n_views=5,
                         increment_deg=72.0, n_facade=3)
    result = run_pipeline(cfg, input_path, args.out / "run")
    print(f"painted {len(result.views)} views through the file protocol")
    print(f"request dirs under {args.out / 'run' / 'requests'}")
    print(f"fog-shaded asset: {result.export_path}")


if __name__ == "__main__":
    main()
