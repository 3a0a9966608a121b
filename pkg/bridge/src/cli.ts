#!/usr/bin/env node
/** bridge CLI: serve paint requests, extract evaluation features.
 *
 *   bridge serve --dir D --model M [--steps N] [--guidance G] [--device D] [--watch]
 *   bridge features --in DIR --out F.bin --extractor dinov2
 *
 * serve answers one request directory, or with --watch polls --dir for
 * request subdirectories (meta.json present, done.json absent) and serves
 * them one at a time until a file named "stop" appears in the directory.
 */

import { existsSync, readdirSync, statSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";

import { extractFeatures, writeFeatureFile } from "./features.js";
import { BridgeConfig, DEFAULT_CONFIG, serveRequest, validateConfig } from "./model.js";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function pendingRequests(root: string): string[] {
  return readdirSync(root)
    .map((name) => join(root, name))
    .filter((path) => {
      try {
        return (
          statSync(path).isDirectory() &&
          existsSync(join(path, "meta.json")) &&
          !existsSync(join(path, "done.json"))
        );
      } catch {
        return false;
      }
    })
    .sort();
}

async function serveCommand(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      dir: { type: "string" },
      model: { type: "string", default: DEFAULT_CONFIG.model },
      steps: { type: "string", default: String(DEFAULT_CONFIG.steps) },
      guidance: { type: "string", default: String(DEFAULT_CONFIG.guidance) },
      device: { type: "string", default: DEFAULT_CONFIG.device },
      watch: { type: "boolean", default: false },
    },
  });
  if (!values.dir) {
    console.error("error: serve requires --dir");
    return 1;
  }
  const cfg: BridgeConfig = {
    model: values.model!,
    guidance: Number(values.guidance),
    steps: Number(values.steps),
    device: values.device!,
    watch: values.watch!,
  };
  try {
    validateConfig(cfg);
  } catch (exc) {
    console.error(`error: ${(exc as Error).message}`);
    return 1;
  }

  if (!cfg.watch) {
    try {
      const report = serveRequest(values.dir, cfg);
      console.log(
        `served ${values.dir} (latent factor ${report.latentFactor}, ${report.schedule})`,
      );
      return 0;
    } catch (exc) {
      console.error(`error: ${(exc as Error).message}`);
      return 1;
    }
  }

  // watch mode: the config (the "loaded model") is built once and reused
  console.log(`watching ${values.dir} for requests (touch 'stop' to exit)`);
  let failures = 0;
  for (;;) {
    if (existsSync(join(values.dir, "stop"))) break;
    for (const request of pendingRequests(values.dir)) {
      try {
        serveRequest(request, cfg);
        console.log(`served ${request}`);
      } catch (exc) {
        failures += 1;
        console.error(`error: ${request}: ${(exc as Error).message}`);
      }
    }
    await sleep(200);
  }
  return failures === 0 ? 0 : 1;
}

function featuresCommand(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      in: { type: "string" },
      out: { type: "string" },
      extractor: { type: "string", default: "histogram" },
    },
  });
  if (!values.in || !values.out) {
    console.error("error: features requires --in and --out");
    return 1;
  }
  try {
    const { rows, dim } = extractFeatures(values.in, values.extractor!);
    writeFeatureFile(values.out, rows, dim, values.extractor!);
    console.log(`wrote ${values.out}: n=${rows.length}, d=${dim}`);
    return 0;
  } catch (exc) {
    console.error(`error: ${(exc as Error).message}`);
    return 1;
  }
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (command === "serve") return serveCommand(rest);
  if (command === "features") return featuresCommand(rest);
  console.error("usage: bridge serve --dir D [--model M] [--watch] | " +
    "bridge features --in DIR --out F.bin [--extractor E]");
  return 1;
}

main().then((code) => process.exit(code));
