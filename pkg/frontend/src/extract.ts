/**
 * Extraction job runner: turns raw text / frame / audio inputs into one
 * tensor file per sample plus a manifest recording ids, relative paths and
 * per-sample dims. Unreadable samples land in the job's error log and the
 * job continues.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  AUDIO_DEFAULTS,
  AudioOptions,
  FeaturizerOptions,
  TEXT_DEFAULTS,
  VIDEO_DEFAULTS,
  featurizeAudio,
  featurizeFrames,
  featurizeText,
} from "./featurizers.js";
import { Tensor, encodeTensor } from "./tensorfile.js";

export type Modality = "text" | "video" | "audio";

export interface TextInput {
  id: string;
  text: string;
}

export interface VideoInput {
  id: string;
  frames: string[];
}

export interface AudioInput {
  id: string;
  wav: string;
}

export type ExtractionInput = TextInput | VideoInput | AudioInput;

export interface ExtractionJob {
  modality: Modality;
  inputs: ExtractionInput[];
  outDir: string;
  modelId?: string;
  dim?: number;
  /** Audio only: standardized duration in seconds. */
  targetSeconds?: number;
}

export interface ExtractedRecord {
  id: string;
  path: string;
  dims: number[];
}

export interface ExtractionResult {
  manifestPath: string;
  records: ExtractedRecord[];
  errors: { id: string; error: string }[];
}

function featurize(job: ExtractionJob, input: ExtractionInput): Tensor {
  if (job.modality === "text") {
    const options: FeaturizerOptions = {
      modelId: job.modelId ?? TEXT_DEFAULTS.modelId,
      dim: job.dim ?? TEXT_DEFAULTS.dim,
    };
    return featurizeText((input as TextInput).text, options);
  }
  if (job.modality === "video") {
    const options = {
      modelId: job.modelId ?? VIDEO_DEFAULTS.modelId,
      dim: job.dim ?? VIDEO_DEFAULTS.dim,
      frames: VIDEO_DEFAULTS.frames,
    };
    return featurizeFrames((input as VideoInput).frames, options);
  }
  const options: AudioOptions = {
    ...AUDIO_DEFAULTS,
    modelId: job.modelId ?? AUDIO_DEFAULTS.modelId,
    dim: job.dim ?? AUDIO_DEFAULTS.dim,
    targetSeconds: job.targetSeconds ?? AUDIO_DEFAULTS.targetSeconds,
  };
  return featurizeAudio(readFileSync((input as AudioInput).wav), options);
}

/** Run a job: one tensor file per sample, then the manifest and error log. */
export function extract(job: ExtractionJob): ExtractionResult {
  mkdirSync(join(job.outDir, "feats"), { recursive: true });
  const records: ExtractedRecord[] = [];
  const errors: { id: string; error: string }[] = [];
  const seen = new Set<string>();
  for (const input of job.inputs) {
    if (seen.has(input.id)) {
      errors.push({ id: input.id, error: "duplicate sample id" });
      continue;
    }
    seen.add(input.id);
    try {
      const tensor = featurize(job, input);
      const rel = join("feats", `${input.id}_${job.modality}.mmrt`);
      writeFileSync(join(job.outDir, rel), encodeTensor(tensor));
      records.push({ id: input.id, path: rel, dims: tensor.dims });
    } catch (err) {
      errors.push({ id: input.id, error: err instanceof Error ? err.message : String(err) });
    }
  }
  const manifest = {
    modality: job.modality,
    model_id: job.modelId ?? defaultModelId(job.modality),
    records,
  };
  const manifestPath = join(job.outDir, "extraction_manifest.json");
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
  if (errors.length > 0) {
    writeFileSync(join(job.outDir, "errors.json"), JSON.stringify(errors, null, 2) + "\n");
  }
  return { manifestPath, records, errors };
}

export function defaultModelId(modality: Modality): string {
  return modality === "text"
    ? TEXT_DEFAULTS.modelId
    : modality === "video"
      ? VIDEO_DEFAULTS.modelId
      : AUDIO_DEFAULTS.modelId;
}
