/**
 * Minimal RIFF/WAVE reader and writer for the audio extraction path.
 *
 * The extractor consumes mono 16 kHz PCM16 recordings (the project's audio
 * interchange format); anything else is rejected with a descriptive error so
 * the job's per-sample error log states exactly what to transcode.
 */

export const TARGET_SAMPLE_RATE = 16000;

export class WavFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "WavFormatError";
  }
}

export interface WavAudio {
  sampleRate: number;
  /** Samples normalized to [-1, 1). */
  samples: Float32Array;
}

export function decodeWav(blob: Buffer): WavAudio {
  if (blob.length < 44) {
    throw new WavFormatError(`file too short for a WAV header (${blob.length} bytes)`);
  }
  if (blob.toString("ascii", 0, 4) !== "RIFF" || blob.toString("ascii", 8, 12) !== "WAVE") {
    throw new WavFormatError("not a RIFF/WAVE file");
  }
  let offset = 12;
  let format: { audioFormat: number; channels: number; sampleRate: number; bits: number } | null = null;
  let data: Buffer | null = null;
  while (offset + 8 <= blob.length) {
    const chunkId = blob.toString("ascii", offset, offset + 4);
    const chunkSize = blob.readUInt32LE(offset + 4);
    const body = blob.subarray(offset + 8, offset + 8 + chunkSize);
    if (chunkId === "fmt ") {
      format = {
        audioFormat: body.readUInt16LE(0),
        channels: body.readUInt16LE(2),
        sampleRate: body.readUInt32LE(4),
        bits: body.readUInt16LE(14),
      };
    } else if (chunkId === "data") {
      data = body;
    }
    offset += 8 + chunkSize + (chunkSize % 2); // chunks are word-aligned
  }
  if (!format || !data) {
    throw new WavFormatError("missing fmt or data chunk");
  }
  if (format.audioFormat !== 1 || format.bits !== 16) {
    throw new WavFormatError(
      `unsupported encoding (format ${format.audioFormat}, ${format.bits}-bit); need PCM16`,
    );
  }
  if (format.channels !== 1) {
    throw new WavFormatError(`need mono audio, got ${format.channels} channels`);
  }
  if (format.sampleRate !== TARGET_SAMPLE_RATE) {
    throw new WavFormatError(
      `need ${TARGET_SAMPLE_RATE} Hz audio, got ${format.sampleRate} Hz`,
    );
  }
  const n = Math.floor(data.length / 2);
  const samples = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    samples[i] = data.readInt16LE(2 * i) / 32768;
  }
  return { sampleRate: format.sampleRate, samples };
}

/** Encode mono float samples as 16 kHz PCM16 (used by tests and fixtures). */
export function encodeWav(samples: Float32Array, sampleRate = TARGET_SAMPLE_RATE): Buffer {
  const dataSize = samples.length * 2;
  const buffer = Buffer.alloc(44 + dataSize);
  buffer.write("RIFF", 0, "ascii");
  buffer.writeUInt32LE(36 + dataSize, 4);
  buffer.write("WAVE", 8, "ascii");
  buffer.write("fmt ", 12, "ascii");
  buffer.writeUInt32LE(16, 16);
  buffer.writeUInt16LE(1, 20); // PCM
  buffer.writeUInt16LE(1, 22); // mono
  buffer.writeUInt32LE(sampleRate, 24);
  buffer.writeUInt32LE(sampleRate * 2, 28);
  buffer.writeUInt16LE(2, 32);
  buffer.writeUInt16LE(16, 34);
  buffer.write("data", 36, "ascii");
  buffer.writeUInt32LE(dataSize, 40);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1 - 1 / 32768, samples[i]));
    buffer.writeInt16LE(Math.round(clamped * 32768), 44 + 2 * i);
  }
  return buffer;
}

/** Standardize length: zero-pad shorter recordings, truncate longer ones. */
export function padOrTruncate(samples: Float32Array, targetSamples: number): Float32Array {
  if (samples.length === targetSamples) {
    return samples;
  }
  const out = new Float32Array(targetSamples);
  out.set(samples.subarray(0, Math.min(samples.length, targetSamples)));
  return out;
}
