/** File protocol: request directories in, color.png + done.json out.
 *
 * A request directory holds meta.json, depth.png (16-bit, code 0 =
 * background, codes 1..65535 spanning [depth_min, depth_max]), mask.png
 * (255 = generate, 0 = keep), and optionally remap.png (colors remapped
 * from already painted views) and zones.png (0 keep / 128 refine /
 * 255 generate). The response is color.png followed by done.json, written
 * last so the consumer can poll for it.
 */

import { existsSync, readFileSync, renameSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { z } from "zod";

import { readPng16, readPngGray8, readPngRgb, writePngRgb } from "./png.js";

export class ProtocolError extends Error {}

export const KEEP = 0;
export const REFINE = 1;
export const GENERATE = 2;

const PNG_TO_ZONE: Record<number, number> = { 0: KEEP, 128: REFINE, 255: GENERATE };

const cameraSchema = z.object({
  azimuth: z.number(),
  elevation: z.number(),
  radius: z.number().default(1.0),
  fov_y: z.number().positive(),
  resolution: z.number().int().min(8),
});

const metaSchema = z
  .object({
    prompt: z.string().min(1),
    view_index: z.number().int().min(0),
    camera: cameraSchema,
    depth_min: z.number(),
    depth_max: z.number(),
    seed: z.number().int(),
  })
  .refine((m) => m.depth_min <= m.depth_max, { message: "depth_min exceeds depth_max" });

export type RequestMeta = z.infer<typeof metaSchema>;

export interface BridgeRequest {
  meta: RequestMeta;
  resolution: number;
  /** view depth per pixel; background is +Infinity */
  depth: Float64Array;
  /** 1 where the painter must generate, 0 where it must keep */
  mask: Uint8Array;
  /** remapped colors from painted views, RGB in [0, 1], or null */
  remap: Float64Array | null;
  /** trust zones (KEEP/REFINE/GENERATE) or null */
  zones: Uint8Array | null;
}

export function readRequest(dir: string): BridgeRequest {
  const metaPath = join(dir, "meta.json");
  if (!existsSync(metaPath)) throw new ProtocolError(`missing ${metaPath}`);
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(metaPath, "utf-8"));
  } catch (exc) {
    throw new ProtocolError(`unparseable ${metaPath}: ${exc}`);
  }
  const verdict = metaSchema.safeParse(parsed);
  if (!verdict.success) {
    throw new ProtocolError(`invalid meta.json: ${verdict.error.issues
      .map((i) => `${i.path.join(".")}: ${i.message}`)
      .join("; ")}`);
  }
  const meta = verdict.data;
  const res = meta.camera.resolution;

  const depthPath = join(dir, "depth.png");
  if (!existsSync(depthPath)) throw new ProtocolError(`missing ${depthPath}`);
  const depthPng = readPng16(depthPath);
  if (depthPng.width !== res || depthPng.height !== res) {
    throw new ProtocolError(
      `depth.png is ${depthPng.width}x${depthPng.height}, camera says ${res}`,
    );
  }
  const depth = new Float64Array(res * res);
  const span = meta.depth_max - meta.depth_min;
  for (let i = 0; i < depth.length; i++) {
    const code = depthPng.codes[i];
    depth[i] = code === 0 ? Infinity : meta.depth_min + ((code - 1) / 65534) * span;
  }

  const maskPath = join(dir, "mask.png");
  if (!existsSync(maskPath)) throw new ProtocolError(`missing ${maskPath}`);
  const maskPng = readPngGray8(maskPath);
  if (maskPng.width !== res || maskPng.height !== res) {
    throw new ProtocolError("mask.png resolution mismatch");
  }
  const mask = new Uint8Array(res * res);
  for (let i = 0; i < mask.length; i++) mask[i] = maskPng.gray[i] !== 0 ? 1 : 0;

  let remap: Float64Array | null = null;
  const remapPath = join(dir, "remap.png");
  if (existsSync(remapPath)) {
    const remapPng = readPngRgb(remapPath);
    if (remapPng.width !== res || remapPng.height !== res) {
      throw new ProtocolError("remap.png resolution mismatch");
    }
    remap = remapPng.rgb;
  }

  let zones: Uint8Array | null = null;
  const zonesPath = join(dir, "zones.png");
  if (existsSync(zonesPath)) {
    const zonesPng = readPngGray8(zonesPath);
    if (zonesPng.width !== res || zonesPng.height !== res) {
      throw new ProtocolError("zones.png resolution mismatch");
    }
    zones = new Uint8Array(res * res);
    for (let i = 0; i < zones.length; i++) {
      const zone = PNG_TO_ZONE[zonesPng.gray[i]];
      if (zone === undefined) {
        throw new ProtocolError("zones.png contains values outside {0, 128, 255}");
      }
      zones[i] = zone;
    }
  }

  return { meta, resolution: res, depth, mask, remap, zones };
}

export interface ResponseInfo {
  status: "ok" | "error";
  painterId: string;
  message?: string;
  /** extra reporting fields merged into done.json (latent factor etc.) */
  extra?: Record<string, unknown>;
}

/** Write color.png (if given) then done.json, done.json strictly last. */
export function writeResponse(
  dir: string,
  color: { width: number; height: number; rgb: Float64Array } | null,
  info: ResponseInfo,
): void {
  if (color !== null) {
    writePngRgb(join(dir, "color.png"), color.width, color.height, color.rgb);
  }
  const done: Record<string, unknown> = {
    status: info.status,
    painter_id: info.painterId,
    ...(info.extra ?? {}),
  };
  if (info.message !== undefined) done.message = info.message;
  const text = JSON.stringify(done, Object.keys(done).sort(), 2) + "\n";
  const path = join(dir, "done.json");
  writeFileSync(`${path}.tmp`, text);
  renameSync(`${path}.tmp`, path);
}
