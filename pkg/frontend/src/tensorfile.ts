/**
 * Binary tensor file codec (format "MMRT"), the cross-language boundary of
 * the retrieval stack.
 *
 * Layout (little-endian):
 * - 4 bytes: magic "MMRT"
 * - 4 bytes: uint32 format version (1)
 * - 1 byte:  dtype code (0 = float32, the only defined code)
 * - 1 byte:  ndim
 * - ndim x 8 bytes: uint64 dims
 * - payload: row-major float32 values
 *
 * Writes are byte-for-byte reproducible, so files round-trip bit-exactly
 * between this package and the Python reader.
 */

export const MAGIC = "MMRT";
export const VERSION = 1;
export const DTYPE_F32 = 0;

const HEADER_SIZE = 10;

export class TensorFormatError extends Error {
  constructor(message: string, readonly offset: number) {
    super(`${message} (byte offset ${offset})`);
    this.name = "TensorFormatError";
  }
}

export interface Tensor {
  dims: number[];
  /** Row-major values; length must equal the product of dims. */
  data: Float32Array;
}

function elementCount(dims: number[]): number {
  return dims.reduce((acc, d) => acc * d, 1);
}

/** Serialize a tensor to the binary MMRT layout. */
export function encodeTensor(tensor: Tensor): Buffer {
  const count = elementCount(tensor.dims);
  if (count !== tensor.data.length) {
    throw new Error(
      `dims ${JSON.stringify(tensor.dims)} imply ${count} values, got ${tensor.data.length}`,
    );
  }
  const buffer = Buffer.alloc(HEADER_SIZE + 8 * tensor.dims.length + 4 * count);
  buffer.write(MAGIC, 0, "ascii");
  buffer.writeUInt32LE(VERSION, 4);
  buffer.writeUInt8(DTYPE_F32, 8);
  buffer.writeUInt8(tensor.dims.length, 9);
  let offset = HEADER_SIZE;
  for (const dim of tensor.dims) {
    buffer.writeBigUInt64LE(BigInt(dim), offset);
    offset += 8;
  }
  for (let i = 0; i < count; i++) {
    buffer.writeFloatLE(tensor.data[i], offset);
    offset += 4;
  }
  return buffer;
}

/** Parse a binary MMRT blob, rejecting malformed input with a byte offset. */
export function decodeTensor(blob: Buffer): Tensor {
  if (blob.length < HEADER_SIZE) {
    throw new TensorFormatError("truncated header", blob.length);
  }
  if (blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new TensorFormatError(`bad magic ${JSON.stringify(blob.toString("ascii", 0, 4))}`, 0);
  }
  const version = blob.readUInt32LE(4);
  if (version !== VERSION) {
    throw new TensorFormatError(`unknown format version ${version}`, 4);
  }
  const dtype = blob.readUInt8(8);
  if (dtype !== DTYPE_F32) {
    throw new TensorFormatError(`unknown dtype code ${dtype}`, 8);
  }
  const ndim = blob.readUInt8(9);
  const dimsEnd = HEADER_SIZE + 8 * ndim;
  if (blob.length < dimsEnd) {
    throw new TensorFormatError("truncated dims", HEADER_SIZE);
  }
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(Number(blob.readBigUInt64LE(HEADER_SIZE + 8 * i)));
  }
  const count = elementCount(dims);
  const expected = dimsEnd + 4 * count;
  if (blob.length < expected) {
    throw new TensorFormatError(
      `truncated payload: need ${expected} bytes, have ${blob.length}`,
      blob.length,
    );
  }
  if (blob.length > expected) {
    throw new TensorFormatError("trailing bytes after payload", expected);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = blob.readFloatLE(dimsEnd + 4 * i);
  }
  return { dims, data };
}

/** Convenience: build a 2-D (rows x cols) tensor from nested arrays. */
export function tensor2d(rows: number[][]): Tensor {
  const nRows = rows.length;
  const nCols = nRows > 0 ? rows[0].length : 0;
  const data = new Float32Array(nRows * nCols);
  for (let i = 0; i < nRows; i++) {
    if (rows[i].length !== nCols) {
      throw new Error(`row ${i} has ${rows[i].length} values, expected ${nCols}`);
    }
    data.set(rows[i].map(Math.fround), i * nCols);
  }
  return { dims: [nRows, nCols], data };
}
