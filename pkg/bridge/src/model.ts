/** Latent masked-blend painting.
 *
 * The serve loop mirrors the constrained-generation recurrence used by the
 * pipeline's own masked-diffusion painter, but runs it in a latent space:
 * encode the remap constraint, start from pure noise, and at every step
 * blend the denoised latent with the forward-diffused constraint using
 * per-cell weights (keep 1, refine 0.5, generate 0) pooled from the pixel
 * mask. Cells with weight 1 therefore reproduce the constraint through the
 * codec exactly, and the painted result is decode(blended latent).
 *
 * The only model shipped here is "procedural": a deterministic denoiser
 * that contracts toward a prompt- and depth-conditioned target. It stands
 * in for a real text- and depth-conditioned latent diffusion checkpoint,
 * which would plug in behind the same step function; guidance scale and
 * device are carried through and reported, not asserted.
 */

import { BridgeRequest, ProtocolError, readRequest, writeResponse, KEEP, REFINE } from "./protocol.js";

export class BridgeError extends Error {}

export interface BridgeConfig {
  model: string;
  guidance: number;
  steps: number;
  device: string;
  /** single-shot when false; poll a directory of requests when true */
  watch: boolean;
}

export const DEFAULT_CONFIG: BridgeConfig = {
  model: "procedural",
  guidance: 7.5,
  steps: 50,
  device: "cpu",
  watch: false,
};

export function validateConfig(cfg: BridgeConfig): void {
  if (!cfg.model) throw new BridgeError("model identifier must be non-empty");
  if (!Number.isInteger(cfg.steps) || cfg.steps < 1) {
    throw new BridgeError(`steps must be a positive integer, got ${cfg.steps}`);
  }
  if (!(cfg.guidance > 0)) throw new BridgeError("guidance must be positive");
}

/** Largest supported pooling factor that divides the resolution. */
export function latentFactor(resolution: number): number {
  for (const f of [8, 4, 2]) if (resolution % f === 0) return f;
  return 1;
}

export interface Latent {
  width: number;
  height: number;
  /** 3 channels per cell, row major */
  data: Float64Array;
}

/** Average-pool an RGB image into the latent grid. */
export function encodeLatent(
  rgb: Float64Array,
  resolution: number,
  factor: number,
): Latent {
  const side = resolution / factor;
  const data = new Float64Array(side * side * 3);
  const norm = 1 / (factor * factor);
  for (let ly = 0; ly < side; ly++) {
    for (let lx = 0; lx < side; lx++) {
      for (let c = 0; c < 3; c++) {
        let sum = 0;
        for (let dy = 0; dy < factor; dy++) {
          for (let dx = 0; dx < factor; dx++) {
            sum += rgb[3 * ((ly * factor + dy) * resolution + lx * factor + dx) + c];
          }
        }
        data[3 * (ly * side + lx) + c] = sum * norm;
      }
    }
  }
  return { width: side, height: side, data };
}

/** Bilinear upsample a latent back to pixel resolution. */
export function decodeLatent(latent: Latent, resolution: number): Float64Array {
  const factor = resolution / latent.width;
  const out = new Float64Array(resolution * resolution * 3);
  const side = latent.width;
  for (let y = 0; y < resolution; y++) {
    const fy = Math.min(side - 1, Math.max(0, (y + 0.5) / factor - 0.5));
    const y0 = Math.floor(fy);
    const y1 = Math.min(side - 1, y0 + 1);
    const wy = fy - y0;
    for (let x = 0; x < resolution; x++) {
      const fx = Math.min(side - 1, Math.max(0, (x + 0.5) / factor - 0.5));
      const x0 = Math.floor(fx);
      const x1 = Math.min(side - 1, x0 + 1);
      const wx = fx - x0;
      for (let c = 0; c < 3; c++) {
        const v00 = latent.data[3 * (y0 * side + x0) + c];
        const v01 = latent.data[3 * (y0 * side + x1) + c];
        const v10 = latent.data[3 * (y1 * side + x0) + c];
        const v11 = latent.data[3 * (y1 * side + x1) + c];
        out[3 * (y * resolution + x) + c] =
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

/** Per-cell blend weights: keep 1, refine 0.5, generate 0, pooled. */
export function downsampleWeights(
  mask: Uint8Array,
  zones: Uint8Array | null,
  resolution: number,
  factor: number,
): Float64Array {
  const side = resolution / factor;
  const weights = new Float64Array(side * side);
  const norm = 1 / (factor * factor);
  for (let ly = 0; ly < side; ly++) {
    for (let lx = 0; lx < side; lx++) {
      let sum = 0;
      for (let dy = 0; dy < factor; dy++) {
        for (let dx = 0; dx < factor; dx++) {
          const i = (ly * factor + dy) * resolution + lx * factor + dx;
          if (zones === null) {
            sum += mask[i] !== 0 ? 0 : 1;
          } else {
            sum += zones[i] === KEEP ? 1 : zones[i] === REFINE ? 0.5 : 0;
          }
        }
      }
      weights[ly * side + lx] = sum * norm;
    }
  }
  return weights;
}

// deterministic standard normals from a counter-based PRNG: every (seed,
// step, index) pair maps to the same draw on every platform
function mix32(a: number, b: number, c: number): number {
  let h = (a ^ 0x9e3779b9) >>> 0;
  h = (h + Math.imul(b ^ 0x5bd1e995, 0x27d4eb2f)) >>> 0;
  h = (h + Math.imul(c ^ 0x165667b1, 0x9e3779b1)) >>> 0;
  h ^= h >>> 16;
  h = Math.imul(h, 0x85ebca6b) >>> 0;
  h ^= h >>> 13;
  h = Math.imul(h, 0xc2b2ae35) >>> 0;
  h ^= h >>> 16;
  return h >>> 0;
}

export function normalDraws(seed: number, step: number, count: number): Float64Array {
  const out = new Float64Array(count);
  for (let i = 0; i < count; i += 2) {
    const u1 = (mix32(seed, step, 2 * i) + 1) / 4294967297;
    const u2 = (mix32(seed, step, 2 * i + 1) + 1) / 4294967297;
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < count) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
  }
  return out;
}

function hashPrompt(prompt: string): number {
  let h = 2166136261;
  for (let i = 0; i < prompt.length; i++) {
    h = Math.imul(h ^ prompt.charCodeAt(i), 16777619) >>> 0;
  }
  return h >>> 0;
}

/** Prompt- and depth-conditioned target latent for the procedural model. */
export function proceduralTarget(request: BridgeRequest, factor: number): Latent {
  const res = request.resolution;
  const side = res / factor;
  const depthLatent = new Float64Array(side * side);
  const coverage = new Float64Array(side * side);
  for (let y = 0; y < res; y++) {
    for (let x = 0; x < res; x++) {
      const d = request.depth[y * res + x];
      if (!Number.isFinite(d)) continue;
      const cell = Math.floor(y / factor) * side + Math.floor(x / factor);
      depthLatent[cell] += d;
      coverage[cell] += 1;
    }
  }
  let dmin = Infinity;
  let dmax = -Infinity;
  for (let i = 0; i < depthLatent.length; i++) {
    if (coverage[i] === 0) continue;
    depthLatent[i] /= coverage[i];
    dmin = Math.min(dmin, depthLatent[i]);
    dmax = Math.max(dmax, depthLatent[i]);
  }
  const span = Math.max(dmax - dmin, 1e-9);

  const h = hashPrompt(request.meta.prompt);
  const phase = (h % 1024) / 1024;
  const base = [
    0.35 + 0.3 * ((h & 0xff) / 255),
    0.35 + 0.3 * (((h >> 8) & 0xff) / 255),
    0.35 + 0.3 * (((h >> 16) & 0xff) / 255),
  ];
  const accent = [base[1], base[2], base[0]];

  const data = new Float64Array(side * side * 3);
  for (let i = 0; i < side * side; i++) {
    if (coverage[i] === 0) continue; // background cells stay black
    const t = (depthLatent[i] - dmin) / span;
    const band = 0.5 + 0.5 * Math.sin(2 * Math.PI * (3 * t + phase));
    for (let c = 0; c < 3; c++) {
      data[3 * i + c] = base[c] + (accent[c] - base[c]) * band;
    }
  }
  return { width: side, height: side, data };
}

export interface ServeReport {
  latentFactor: number;
  schedule: string;
  steps: number;
}

/** Run the masked-blend loop for one request and write the response. */
export function serveRequest(dir: string, cfg: BridgeConfig): ServeReport {
  validateConfig(cfg);
  const painterId = `bridge-${cfg.model}`;
  if (cfg.model !== "procedural") {
    writeResponse(dir, null, {
      status: "error",
      painterId,
      message: `model load failure: no local weights for '${cfg.model}'`,
    });
    throw new BridgeError(`model load failure: no local weights for '${cfg.model}'`);
  }

  let request: BridgeRequest;
  try {
    request = readRequest(dir);
  } catch (exc) {
    if (exc instanceof ProtocolError) {
      writeResponse(dir, null, {
        status: "error",
        painterId,
        message: exc.message,
      });
    }
    throw exc;
  }

  const res = request.resolution;
  const factor = latentFactor(res);
  const constraint = request.remap ?? new Float64Array(res * res * 3);
  const x0 = encodeLatent(constraint, res, factor);
  const weights = downsampleWeights(request.mask, request.zones, res, factor);
  const target = proceduralTarget(request, factor);
  const cells = x0.width * x0.height;
  const seed = request.meta.seed;
  const n = cfg.steps;

  // forward diffusion: signal sqrt(1 - t/n), noise sqrt(t/n)
  const diffused = (t: number): Float64Array => {
    const s = Math.sqrt(1 - t / n);
    const q = Math.sqrt(t / n);
    const eps = normalDraws(seed, t, cells * 3);
    const out = new Float64Array(cells * 3);
    for (let i = 0; i < out.length; i++) out[i] = s * x0.data[i] + q * eps[i];
    return out;
  };

  let blended = diffused(n);
  for (let t = n - 1; t >= 0; t--) {
    const xt = diffused(t);
    for (let i = 0; i < cells; i++) {
      const m = weights[i];
      for (let c = 0; c < 3; c++) {
        const j = 3 * i + c;
        const denoised = 0.5 * blended[j] + 0.5 * target.data[j];
        blended[j] = (1 - m) * denoised + m * xt[j];
      }
    }
  }

  const rgb = decodeLatent({ width: x0.width, height: x0.height, data: blended }, res);
  const report: ServeReport = {
    latentFactor: factor,
    schedule: `linear-${n}`,
    steps: n,
  };
  writeResponse(dir, { width: res, height: res, rgb }, {
    status: "ok",
    painterId,
    extra: {
      latent_factor: factor,
      schedule: report.schedule,
      steps: n,
      guidance: cfg.guidance,
      device: cfg.device,
    },
  });
  return report;
}
