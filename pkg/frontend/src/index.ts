export { Tensor, TensorFormatError, decodeTensor, encodeTensor, tensor2d } from "./tensorfile.js";
export {
  AUDIO_DEFAULTS,
  TEXT_DEFAULTS,
  VIDEO_DEFAULTS,
  embedBytes,
  featurizeAudio,
  featurizeFrames,
  featurizeText,
  tokenizeText,
} from "./featurizers.js";
export { TARGET_SAMPLE_RATE, WavFormatError, decodeWav, encodeWav, padOrTruncate } from "./wav.js";
export {
  ExtractionInput,
  ExtractionJob,
  ExtractionResult,
  Modality,
  extract,
} from "./extract.js";
