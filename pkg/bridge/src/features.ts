/** Image feature extraction into the evaluation feature-file format.
 *
 * File layout (little endian): magic "FTS1", uint32 n, uint32 d, uint16
 * byte length of the utf-8 extractor id, the id bytes, then the n x d
 * float32 row-major matrix.
 *
 * The deep extractors (inception, clip, dinov2) are registered interfaces
 * only: they require model weights that are not bundled, and requesting one
 * fails with "extractor unavailable". The built-in "histogram" extractor
 * (32 bins per RGB channel, normalized by pixel count) is always available
 * and deterministic, which is what the format and round-trip tests need.
 */

import { readdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { BridgeError } from "./model.js";
import { readPngRgb } from "./png.js";

const BINS = 32;

export interface Extractor {
  dim: number;
  available: boolean;
  extract?: (rgb: Float64Array) => Float64Array;
}

function histogram(rgb: Float64Array): Float64Array {
  const out = new Float64Array(3 * BINS);
  const pixels = rgb.length / 3;
  for (let i = 0; i < pixels; i++) {
    for (let c = 0; c < 3; c++) {
      const bin = Math.min(BINS - 1, Math.floor(rgb[3 * i + c] * BINS));
      out[c * BINS + bin] += 1;
    }
  }
  for (let i = 0; i < out.length; i++) out[i] /= pixels;
  return out;
}

export const EXTRACTORS: Record<string, Extractor> = {
  histogram: { dim: 3 * BINS, available: true, extract: histogram },
  inception: { dim: 2048, available: false },
  clip: { dim: 768, available: false },
  dinov2: { dim: 1024, available: false },
};

export function extractFeatures(dir: string, extractorId: string): {
  rows: Float64Array[];
  dim: number;
} {
  const extractor = EXTRACTORS[extractorId];
  if (extractor === undefined) {
    throw new BridgeError(
      `unknown extractor '${extractorId}' (choose from ${Object.keys(EXTRACTORS).join(", ")})`,
    );
  }
  if (!extractor.available || extractor.extract === undefined) {
    throw new BridgeError(
      `extractor unavailable: '${extractorId}' needs model weights that are not bundled; use 'histogram'`,
    );
  }
  const names = readdirSync(dir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort();
  if (names.length === 0) {
    throw new BridgeError(`no images: ${dir} contains no .png files`);
  }
  const rows = names.map((name) => extractor.extract!(readPngRgb(join(dir, name)).rgb));
  return { rows, dim: extractor.dim };
}

export function writeFeatureFile(
  path: string,
  rows: Float64Array[],
  dim: number,
  extractorId: string,
): void {
  const ident = Buffer.from(extractorId, "utf-8");
  const header = Buffer.alloc(14 + ident.length);
  header.write("FTS1", 0, "ascii");
  header.writeUInt32LE(rows.length, 4);
  header.writeUInt32LE(dim, 8);
  header.writeUInt16LE(ident.length, 12);
  ident.copy(header, 14);
  const body = Buffer.alloc(4 * rows.length * dim);
  rows.forEach((row, r) => {
    for (let j = 0; j < dim; j++) body.writeFloatLE(row[j], 4 * (r * dim + j));
  });
  writeFileSync(path, Buffer.concat([header, body]));
}
