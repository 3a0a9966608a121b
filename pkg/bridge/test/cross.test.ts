/** Interop with the Python pipeline through the shared file formats.
 *
 * These tests need the repaint3d package on python3's path; they are
 * skipped wholesale when it is not importable so the bridge's own suite
 * stays self-contained.
 */

import { spawnSync } from "node:child_process";
import { existsSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { extractFeatures, writeFeatureFile } from "../src/features.js";
import { DEFAULT_CONFIG, serveRequest } from "../src/model.js";
import { writePngRgb } from "../src/png.js";
import { tempDir } from "./fixtures.js";

const CLI = fileURLToPath(new URL("../dist/cli.js", import.meta.url));

function python(script: string): { status: number; stdout: string; stderr: string } {
  const result = spawnSync("python3", ["-c", script], { encoding: "utf-8" });
  return { status: result.status ?? -1, stdout: result.stdout, stderr: result.stderr };
}

const hasPipeline = python("import repaint3d").status === 0;

describe.skipIf(!hasPipeline)("pipeline interop", () => {
  it("answers a pipeline-written request so the pipeline accepts it", () => {
    const dir = tempDir();
    const write = python(
      `
from repaint3d.geometry import camera_on_sphere, normalize
from repaint3d.protocol import PaintRequest, write_request
from repaint3d.raster import rasterize
from repaint3d.shapes import make_icosphere
import numpy as np

mesh = normalize(make_icosphere(3))
cam = camera_on_sphere(30.0, 10.0, radius=2.5, fov_y=60.0, resolution=64)
frag = rasterize(mesh, cam)
mask = np.isfinite(frag.depth).astype(np.uint8)
write_request(PaintRequest(prompt="a stone gargoyle", view_index=0,
                           camera=cam, depth=frag.depth, mask=mask, seed=7),
              ${JSON.stringify(dir)})
print("request ready")
`,
    );
    expect(write.stderr).toBe("");
    expect(write.status).toBe(0);

    serveRequest(dir, DEFAULT_CONFIG);

    const read = python(
      `
import numpy as np
from repaint3d.protocol import read_response

color = read_response(${JSON.stringify(dir)}, 64)
assert color.shape == (64, 64, 3), color.shape
assert color.dtype == np.float64
assert 0.0 <= color.min() and color.max() <= 1.0
print("response accepted")
`,
    );
    expect(read.stderr).toBe("");
    expect(read.status).toBe(0);
    expect(read.stdout).toContain("response accepted");
  });

  it(
    "paints a whole pipeline run as the external painter",
    { timeout: 180_000 },
    () => {
      const out = join(tempDir(), "run");
      const result = python(
        `
from pathlib import Path
from repaint3d.geometry import normalize
from repaint3d.meshio import save_ply
from repaint3d.pipeline import PipelineConfig, run_pipeline
from repaint3d.shapes import make_icosphere

work = Path(${JSON.stringify(out)})
work.mkdir(parents=True)
asset = work / "input.ply"
save_ply(asset, normalize(make_icosphere(3)))
cfg = PipelineConfig(prompt_object="gargoyle", resolution=64, n_views=3,
                     increment_deg=120.0, n_facade=3, eval_views=2,
                     sample_density=2e3, target_edge=0.3,
                     painter="external:node ${CLI} serve --dir {dir}")
result = run_pipeline(cfg, asset, work / "out")
print("pipeline done:", result.export_path.name)
`,
      );
      expect(result.stderr).toBe("");
      expect(result.status).toBe(0);
      expect(result.stdout).toContain("pipeline done:");
      expect(existsSync(join(out, "out", "manifest.json"))).toBe(true);
    },
  );

  it("writes feature files the evaluation loader accepts", () => {
    const dir = tempDir();
    const res = 24;
    for (let k = 0; k < 8; k++) {
      const rgb = new Float64Array(res * res * 3);
      for (let i = 0; i < res * res; i++) {
        rgb[3 * i] = (i % res) / res;
        rgb[3 * i + 1] = (k + 1) / 9;
        rgb[3 * i + 2] = 0.25;
      }
      writePngRgb(join(dir, `r${k}.png`), res, res, rgb);
    }
    const featurePath = join(tempDir(), "bridge.fts");
    const { rows, dim } = extractFeatures(dir, "histogram");
    writeFeatureFile(featurePath, rows, dim, "histogram");

    const read = python(
      `
from repaint3d.metrics import fid, read_features

loaded = read_features(${JSON.stringify(featurePath)})
assert loaded.features.shape == (8, 96), loaded.features.shape
assert loaded.extractor_id == "histogram", loaded.extractor_id
# the matrix square root is approximate on a rank-deficient covariance
assert abs(fid(loaded.features, loaded.features)) < 1e-4
print("features accepted")
`,
    );
    expect(read.stderr).toBe("");
    expect(read.status).toBe(0);
    expect(read.stdout).toContain("features accepted");
  });
});

describe.runIf(!hasPipeline)("pipeline interop (unavailable)", () => {
  it("is skipped because python3 cannot import repaint3d", () => {
    expect(hasPipeline).toBe(false);
  });
});
