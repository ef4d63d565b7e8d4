#!/usr/bin/env node
/**
 * mmr-extract: run an extraction job from a JSONL input list.
 *
 *   mmr-extract --modality text  --inputs texts.jsonl  --out out/
 *   mmr-extract --modality audio --inputs clips.jsonl  --out out/ --seconds 4
 *
 * Input lines are {"id", "text"} for text, {"id", "frames": [paths]} for
 * video, {"id", "wav": path} for audio. Paths are resolved relative to the
 * inputs file.
 */

import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";

import { ExtractionInput, ExtractionJob, Modality, extract } from "./extract.js";

function usage(message?: string): never {
  if (message) {
    console.error(`error: ${message}`);
  }
  console.error(
    "usage: mmr-extract --modality text|video|audio --inputs FILE.jsonl --out DIR " +
      "[--model-id ID] [--dim N] [--seconds S]",
  );
  process.exit(2);
}

function parseArgs(argv: string[]): ExtractionJob {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      usage(`malformed arguments near ${argv[i]}`);
    }
    flags.set(argv[i].slice(2), argv[i + 1]);
  }
  const modality = flags.get("modality") as Modality | undefined;
  const inputsPath = flags.get("inputs");
  const outDir = flags.get("out");
  if (!modality || !["text", "video", "audio"].includes(modality)) {
    usage("--modality must be text, video or audio");
  }
  if (!inputsPath || !outDir) {
    usage("--inputs and --out are required");
  }

  const base = dirname(resolve(inputsPath!));
  const inputs: ExtractionInput[] = [];
  const lines = readFileSync(inputsPath!, "utf-8").split("\n");
  for (const [lineno, line] of lines.entries()) {
    if (!line.trim()) {
      continue;
    }
    let row: Record<string, unknown>;
    try {
      row = JSON.parse(line);
    } catch (err) {
      usage(`${inputsPath}:${lineno + 1}: invalid JSON (${err})`);
    }
    if (typeof row!.id !== "string") {
      usage(`${inputsPath}:${lineno + 1}: missing string "id"`);
    }
    if (modality === "text") {
      inputs.push({ id: row!.id as string, text: String(row!.text ?? "") });
    } else if (modality === "video") {
      const frames = (row!.frames as string[] | undefined) ?? [];
      inputs.push({ id: row!.id as string, frames: frames.map((f) => resolve(base, f)) });
    } else {
      inputs.push({ id: row!.id as string, wav: resolve(base, String(row!.wav ?? "")) });
    }
  }

  return {
    modality: modality!,
    inputs,
    outDir: outDir!,
    modelId: flags.get("model-id"),
    dim: flags.has("dim") ? Number(flags.get("dim")) : undefined,
    targetSeconds: flags.has("seconds") ? Number(flags.get("seconds")) : undefined,
  };
}

const job = parseArgs(process.argv.slice(2));
const result = extract(job);
console.log(
  `extracted ${result.records.length}/${job.inputs.length} ${job.modality} samples -> ${job.outDir}`,
);
if (result.errors.length > 0) {
  console.error(`${result.errors.length} samples failed (see errors.json):`);
  for (const err of result.errors) {
    console.error(`  ${err.id}: ${err.error}`);
  }
  process.exit(1);
}
