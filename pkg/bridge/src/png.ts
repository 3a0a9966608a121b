/** PNG helpers over pngjs: 16-bit depth codes in, 8-bit color out. */

import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { PNG } from "pngjs";

export class ImageError extends Error {}

export interface Gray16 {
  width: number;
  height: number;
  /** raw 16-bit codes, row major */
  codes: Uint16Array;
}

/** Read a 16-bit grayscale PNG without rescaling the sample values. */
export function readPng16(path: string): Gray16 {
  const png = PNG.sync.read(readFileSync(path), { skipRescale: true });
  if (png.depth !== 16) {
    throw new ImageError(`${path} must be a 16-bit PNG (got ${png.depth}-bit)`);
  }
  const n = png.width * png.height;
  const codes = new Uint16Array(n);
  // pngjs expands to RGBA regardless of source color type
  for (let i = 0; i < n; i++) codes[i] = png.data[4 * i];
  return { width: png.width, height: png.height, codes };
}

/** Read an 8-bit PNG as a single gray channel (R of the expanded RGBA). */
export function readPngGray8(path: string): {
  width: number;
  height: number;
  gray: Uint8Array;
} {
  const png = PNG.sync.read(readFileSync(path));
  const n = png.width * png.height;
  const gray = new Uint8Array(n);
  for (let i = 0; i < n; i++) gray[i] = png.data[4 * i];
  return { width: png.width, height: png.height, gray };
}

/** Read an 8-bit PNG as RGB floats in [0, 1], row major, 3 per pixel. */
export function readPngRgb(path: string): {
  width: number;
  height: number;
  rgb: Float64Array;
} {
  const png = PNG.sync.read(readFileSync(path));
  const n = png.width * png.height;
  const rgb = new Float64Array(3 * n);
  for (let i = 0; i < n; i++) {
    rgb[3 * i] = png.data[4 * i] / 255;
    rgb[3 * i + 1] = png.data[4 * i + 1] / 255;
    rgb[3 * i + 2] = png.data[4 * i + 2] / 255;
  }
  return { width: png.width, height: png.height, rgb };
}

/** Write raw 16-bit codes as a grayscale PNG. */
export function writePng16(
  path: string,
  width: number,
  height: number,
  codes: Uint16Array,
): void {
  const png = new PNG({ width, height, colorType: 0, inputColorType: 0, bitDepth: 16 });
  png.data = Buffer.from(codes.buffer, codes.byteOffset, codes.byteLength) as never;
  const buffer = PNG.sync.write(png, { colorType: 0, inputColorType: 0, bitDepth: 16 });
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, buffer);
  renameSync(tmp, path);
}

/** Write 8-bit grayscale values, atomically. */
export function writePngGray8(
  path: string,
  width: number,
  height: number,
  values: Uint8Array,
): void {
  const png = new PNG({ width, height, colorType: 0, inputColorType: 0 });
  png.data = Buffer.from(values.buffer, values.byteOffset, values.byteLength) as never;
  const buffer = PNG.sync.write(png, { colorType: 0, inputColorType: 0 });
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, buffer);
  renameSync(tmp, path);
}

/** Write RGB floats in [0, 1] as an 8-bit RGB PNG, atomically. */
export function writePngRgb(
  path: string,
  width: number,
  height: number,
  rgb: Float64Array,
): void {
  const png = new PNG({ width, height });
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const v = Math.min(1, Math.max(0, rgb[3 * i + c]));
      png.data[4 * i + c] = Math.round(v * 255);
    }
    png.data[4 * i + 3] = 255;
  }
  const buffer = PNG.sync.write(png, { colorType: 2 });
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, buffer);
  renameSync(tmp, path);
}
