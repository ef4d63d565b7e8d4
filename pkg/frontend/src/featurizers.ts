/**
 * Per-modality featurizers producing (L, C_in) token features.
 *
 * These are deterministic, dependency-free local encoders keyed by a model
 * identifier string: the identifier is configuration, not code, so a real
 * pretrained backend (language/vision/speech model) can be substituted
 * behind the same signatures without touching the file boundary.
 */

import { readFileSync } from "node:fs";

import { fnv1aBytes, hashEmbedding, mulberry32, fnv1a } from "./hashing.js";
import { Tensor } from "./tensorfile.js";
import { TARGET_SAMPLE_RATE, decodeWav, padOrTruncate } from "./wav.js";

export interface FeaturizerOptions {
  modelId: string;
  dim: number;
}

export interface AudioOptions extends FeaturizerOptions {
  /** Recordings are zero-padded or truncated to this many seconds. */
  targetSeconds: number;
  /** Analysis window and hop in samples (20 ms hop at 16 kHz by default). */
  windowSize: number;
  hopSize: number;
}

export const TEXT_DEFAULTS: FeaturizerOptions = { modelId: "hash-text-v1", dim: 64 };
export const VIDEO_DEFAULTS: FeaturizerOptions & { frames: number } = {
  modelId: "hash-frame-v1",
  dim: 64,
  frames: 8,
};
export const AUDIO_DEFAULTS: AudioOptions = {
  modelId: "hash-audio-v1",
  dim: 64,
  targetSeconds: 4.0,
  windowSize: 400,
  hopSize: 320,
};

const TOKEN_PATTERN = /[a-z0-9']+/g;

/** Lower-cased word tokens; an empty input still yields one marker token. */
export function tokenizeText(text: string): string[] {
  const tokens = text.toLowerCase().match(TOKEN_PATTERN) ?? [];
  return tokens.length > 0 ? tokens : ["<empty>"];
}

/**
 * Text -> (L, C) features, one token embedding per word. Token embeddings
 * mix the word identity with a small positional component so reordered
 * sentences do not collide.
 */
export function featurizeText(text: string, options: FeaturizerOptions = TEXT_DEFAULTS): Tensor {
  const tokens = tokenizeText(text);
  const data = new Float32Array(tokens.length * options.dim);
  for (let t = 0; t < tokens.length; t++) {
    const word = hashEmbedding(tokens[t], options.dim, options.modelId);
    const position = hashEmbedding(`pos:${t}`, options.dim, options.modelId);
    for (let c = 0; c < options.dim; c++) {
      data[t * options.dim + c] = Math.fround(word[c] + 0.1 * position[c]);
    }
  }
  return { dims: [tokens.length, options.dim], data };
}

/**
 * Frame files -> (L_v, C) features: uniformly sample `frames` of the given
 * images and embed each frame's byte content.
 */
export function featurizeFrames(
  framePaths: string[],
  options: FeaturizerOptions & { frames: number } = VIDEO_DEFAULTS,
): Tensor {
  if (framePaths.length === 0) {
    throw new Error("video sample has no frame files");
  }
  const picked: string[] = [];
  for (let i = 0; i < options.frames; i++) {
    const idx = Math.floor((i * framePaths.length) / options.frames);
    picked.push(framePaths[Math.min(idx, framePaths.length - 1)]);
  }
  const data = new Float32Array(options.frames * options.dim);
  for (let f = 0; f < picked.length; f++) {
    const bytes = readFileSync(picked[f]);
    const embedding = embedBytes(bytes, options.dim, options.modelId);
    data.set(embedding, f * options.dim);
  }
  return { dims: [options.frames, options.dim], data };
}

/** Deterministic content embedding of a byte blob (chunk-hash projections). */
export function embedBytes(bytes: Uint8Array, dim: number, modelId: string): Float32Array {
  const out = new Float32Array(dim);
  const nChunks = 16;
  const chunkLen = Math.max(1, Math.ceil(bytes.length / nChunks));
  for (let chunk = 0; chunk < nChunks; chunk++) {
    const piece = bytes.subarray(chunk * chunkLen, (chunk + 1) * chunkLen);
    const rand = mulberry32(fnv1aBytes(piece, fnv1a(`${modelId}:${chunk}`)));
    const scale = 1.0 / Math.sqrt(dim * nChunks);
    for (let c = 0; c < dim; c++) {
      out[c] = Math.fround(out[c] + (rand() * 2 - 1) * scale);
    }
  }
  return out;
}

/**
 * WAV file -> (L, C) frame features. The recording is standardized to
 * `targetSeconds` (zero-padded or truncated), then windowed; each frame
 * carries log energy, zero-crossing rate and banded spectral magnitudes
 * projected up to the feature dim.
 */
export function featurizeAudio(wavBytes: Buffer, options: AudioOptions = AUDIO_DEFAULTS): Tensor {
  const audio = decodeWav(wavBytes);
  const target = Math.round(options.targetSeconds * TARGET_SAMPLE_RATE);
  const samples = padOrTruncate(audio.samples, target);
  const frames = Math.max(1, Math.floor((samples.length - options.windowSize) / options.hopSize) + 1);
  const nBands = 8;
  const bandHz = [125, 250, 500, 1000, 2000, 3000, 5000, 7000];
  const projections: Float32Array[] = [];
  for (let b = 0; b < nBands + 2; b++) {
    projections.push(hashEmbedding(`feature:${b}`, options.dim, options.modelId));
  }

  const data = new Float32Array(frames * options.dim);
  for (let f = 0; f < frames; f++) {
    const start = f * options.hopSize;
    const window = samples.subarray(start, start + options.windowSize);
    const measures = new Float32Array(nBands + 2);
    let energy = 0;
    let crossings = 0;
    for (let i = 0; i < window.length; i++) {
      energy += window[i] * window[i];
      if (i > 0 && window[i - 1] * window[i] < 0) {
        crossings += 1;
      }
    }
    measures[0] = Math.log1p(energy);
    measures[1] = crossings / Math.max(1, window.length);
    for (let b = 0; b < nBands; b++) {
      measures[2 + b] = Math.log1p(goertzelMagnitude(window, bandHz[b], TARGET_SAMPLE_RATE));
    }
    for (let c = 0; c < options.dim; c++) {
      let value = 0;
      for (let m = 0; m < measures.length; m++) {
        value += measures[m] * projections[m][c];
      }
      data[f * options.dim + c] = Math.fround(value);
    }
  }
  return { dims: [frames, options.dim], data };
}

/** Goertzel single-bin magnitude at `freq` Hz. */
export function goertzelMagnitude(window: Float32Array, freq: number, sampleRate: number): number {
  const k = Math.round((window.length * freq) / sampleRate);
  const omega = (2 * Math.PI * k) / window.length;
  const coeff = 2 * Math.cos(omega);
  let s0 = 0;
  let s1 = 0;
  let s2 = 0;
  for (let i = 0; i < window.length; i++) {
    s0 = window[i] + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  const power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
  return Math.sqrt(Math.max(0, power)) / window.length;
}
