/** Request-directory fixtures and a small SSIM for the bridge tests. */

import { mkdtempSync, renameSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { writePng16, writePngGray8, writePngRgb } from "../src/png.js";

export interface FixtureOptions {
  resolution?: number;
  prompt?: string;
  seed?: number;
  /** pixel mask mode: generate everywhere, keep everywhere, or left half */
  mask?: "generate" | "keep" | "half";
  /** write a smooth gradient remap.png */
  remap?: boolean;
  /** raw zones.png gray values (length resolution^2), written verbatim */
  zonesPng?: Uint8Array | null;
}

/** Synthetic ball depth: finite inside a centered disk, background outside. */
export function ballDepth(res: number): {
  depth: Float64Array;
  codes: Uint16Array;
  dmin: number;
  dmax: number;
} {
  const depth = new Float64Array(res * res).fill(Infinity);
  for (let y = 0; y < res; y++) {
    for (let x = 0; x < res; x++) {
      const u = ((x + 0.5) / res) * 2 - 1;
      const v = ((y + 0.5) / res) * 2 - 1;
      const rr = u * u + v * v;
      if (rr < 0.49) depth[y * res + x] = 1.75 + 1.5 * rr;
    }
  }
  let dmin = Infinity;
  let dmax = -Infinity;
  for (const d of depth) {
    if (!Number.isFinite(d)) continue;
    dmin = Math.min(dmin, d);
    dmax = Math.max(dmax, d);
  }
  const span = Math.max(dmax - dmin, 1e-12);
  const codes = new Uint16Array(res * res);
  for (let i = 0; i < codes.length; i++) {
    if (!Number.isFinite(depth[i])) continue;
    codes[i] = 1 + Math.round(((depth[i] - dmin) / span) * 65534);
  }
  return { depth, codes, dmin, dmax };
}

/** Smooth RGB gradient, the kind of remap pooling barely disturbs. */
export function gradientRgb(res: number): Float64Array {
  const rgb = new Float64Array(res * res * 3);
  for (let y = 0; y < res; y++) {
    for (let x = 0; x < res; x++) {
      const i = 3 * (y * res + x);
      rgb[i] = x / (res - 1);
      rgb[i + 1] = y / (res - 1);
      rgb[i + 2] = 0.5;
    }
  }
  return rgb;
}

export function tempDir(): string {
  return mkdtempSync(join(tmpdir(), "bridge-test-"));
}

/** Write a complete request into dir; meta.json goes last. */
export function writeRequestDir(dir: string, options: FixtureOptions = {}): string {
  const res = options.resolution ?? 64;
  const { codes, dmin, dmax } = ballDepth(res);
  writePng16(join(dir, "depth.png"), res, res, codes);

  const mask = new Uint8Array(res * res);
  const mode = options.mask ?? "generate";
  for (let y = 0; y < res; y++) {
    for (let x = 0; x < res; x++) {
      const generate = mode === "generate" || (mode === "half" && x < res / 2);
      mask[y * res + x] = generate ? 255 : 0;
    }
  }
  writePngGray8(join(dir, "mask.png"), res, res, mask);

  if (options.remap) {
    writePngRgb(join(dir, "remap.png"), res, res, gradientRgb(res));
  }
  if (options.zonesPng) {
    writePngGray8(join(dir, "zones.png"), res, res, options.zonesPng);
  }

  const meta = {
    prompt: options.prompt ?? "a painted test ball",
    view_index: 0,
    camera: { azimuth: 0.0, elevation: 0.0, radius: 2.5, fov_y: 60.0, resolution: res },
    depth_min: dmin,
    depth_max: dmax,
    seed: options.seed ?? 0,
  };
  const metaPath = join(dir, "meta.json");
  writeFileSync(`${metaPath}.tmp`, JSON.stringify(meta, null, 2) + "\n");
  renameSync(`${metaPath}.tmp`, metaPath);
  return dir;
}

export function makeRequestDir(options: FixtureOptions = {}): string {
  return writeRequestDir(tempDir(), options);
}

/** Mean windowed SSIM on the channel-averaged image (8x8 windows, stride 4). */
export function ssim(a: Float64Array, b: Float64Array, res: number): number {
  const la = new Float64Array(res * res);
  const lb = new Float64Array(res * res);
  for (let i = 0; i < res * res; i++) {
    la[i] = (a[3 * i] + a[3 * i + 1] + a[3 * i + 2]) / 3;
    lb[i] = (b[3 * i] + b[3 * i + 1] + b[3 * i + 2]) / 3;
  }
  const win = 8;
  const stride = 4;
  const c1 = 0.01 ** 2;
  const c2 = 0.03 ** 2;
  let total = 0;
  let count = 0;
  for (let y0 = 0; y0 + win <= res; y0 += stride) {
    for (let x0 = 0; x0 + win <= res; x0 += stride) {
      let sa = 0;
      let sb = 0;
      let saa = 0;
      let sbb = 0;
      let sab = 0;
      const n = win * win;
      for (let dy = 0; dy < win; dy++) {
        for (let dx = 0; dx < win; dx++) {
          const i = (y0 + dy) * res + x0 + dx;
          sa += la[i];
          sb += lb[i];
          saa += la[i] * la[i];
          sbb += lb[i] * lb[i];
          sab += la[i] * lb[i];
        }
      }
      const ma = sa / n;
      const mb = sb / n;
      const va = saa / n - ma * ma;
      const vb = sbb / n - mb * mb;
      const cov = sab / n - ma * mb;
      total +=
        ((2 * ma * mb + c1) * (2 * cov + c2)) /
        ((ma * ma + mb * mb + c1) * (va + vb + c2));
      count += 1;
    }
  }
  return total / count;
}
