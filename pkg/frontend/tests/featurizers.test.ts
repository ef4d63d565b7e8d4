import { describe, expect, it } from "vitest";

import {
  AUDIO_DEFAULTS,
  featurizeAudio,
  featurizeText,
  tokenizeText,
} from "../src/featurizers.js";
import { decodeWav, encodeWav, padOrTruncate } from "../src/wav.js";

function sine(seconds: number, freq = 440, rate = 16000): Float32Array {
  const samples = new Float32Array(Math.round(seconds * rate));
  for (let i = 0; i < samples.length; i++) {
    samples[i] = 0.5 * Math.sin((2 * Math.PI * freq * i) / rate);
  }
  return samples;
}

describe("text featurizer", () => {
  it("emits one token embedding per word", () => {
    const tensor = featurizeText("A person walks forward quickly");
    expect(tensor.dims).toEqual([5, 64]);
  });

  it("empty string still yields a minimum-length output", () => {
    const tensor = featurizeText("");
    expect(tensor.dims[0]).toBeGreaterThanOrEqual(1);
    expect(tensor.dims).toEqual([1, 64]);
  });

  it("is deterministic and model-id dependent", () => {
    const a = featurizeText("turn around");
    const b = featurizeText("turn around");
    expect(Buffer.from(a.data.buffer).equals(Buffer.from(b.data.buffer))).toBe(true);
    const other = featurizeText("turn around", { modelId: "hash-text-v2", dim: 64 });
    expect(Buffer.from(a.data.buffer).equals(Buffer.from(other.data.buffer))).toBe(false);
  });

  it("word order changes the features", () => {
    const ab = featurizeText("walk then sit");
    const ba = featurizeText("sit then walk");
    expect(Buffer.from(ab.data.buffer).equals(Buffer.from(ba.data.buffer))).toBe(false);
  });

  it("tokenizer lower-cases and strips punctuation", () => {
    expect(tokenizeText("A person, walking!")).toEqual(["a", "person", "walking"]);
    expect(tokenizeText("   ")).toEqual(["<empty>"]);
  });
});

describe("wav handling", () => {
  it("round trips PCM16 mono", () => {
    const original = sine(0.1);
    const decoded = decodeWav(encodeWav(original));
    expect(decoded.sampleRate).toBe(16000);
    expect(decoded.samples.length).toBe(original.length);
    let worst = 0;
    for (let i = 0; i < original.length; i++) {
      worst = Math.max(worst, Math.abs(decoded.samples[i] - original[i]));
    }
    expect(worst).toBeLessThan(1 / 32768 + 1e-6); // quantization only
  });

  it("rejects the wrong sample rate", () => {
    expect(() => decodeWav(encodeWav(sine(0.1), 44100))).toThrow(/16000/);
  });

  it("pads shorter and truncates longer recordings", () => {
    const short = padOrTruncate(sine(0.1), 16000);
    expect(short.length).toBe(16000);
    expect(short[15999]).toBe(0); // zero padding
    const long = padOrTruncate(sine(2.0), 16000);
    expect(long.length).toBe(16000);
  });
});

describe("audio featurizer", () => {
  it("standardized duration gives a fixed frame count for any input length", () => {
    const opts = { ...AUDIO_DEFAULTS, targetSeconds: 1.0 };
    const lengths = [0.05, 0.5, 1.0, 3.0];
    const dims = lengths.map((sec) => featurizeAudio(encodeWav(sine(sec)), opts).dims);
    const expectFrames = Math.floor((16000 - opts.windowSize) / opts.hopSize) + 1;
    for (const d of dims) {
      expect(d).toEqual([expectFrames, opts.dim]);
    }
  });

  it("distinguishes tones of different frequency", () => {
    const opts = { ...AUDIO_DEFAULTS, targetSeconds: 0.5 };
    const low = featurizeAudio(encodeWav(sine(0.5, 250)), opts);
    const high = featurizeAudio(encodeWav(sine(0.5, 3000)), opts);
    expect(Buffer.from(low.data.buffer).equals(Buffer.from(high.data.buffer))).toBe(false);
  });
});
