/**
 * Binary container for named dense tensors (`.t2d` files).
 *
 * Layout: 8-byte magic `T2DTNSR1`, u32 record count, then per record a
 * u32 name length, the UTF-8 name, a u8 dtype code, a u8 rank, one u64
 * per dimension, and the raw payload. All integers little-endian. This
 * mirrors the engine's reader byte for byte; containers written here are
 * the engine's inputs, so the wire format is the contract.
 */

import { randomBytes } from 'node:crypto';
import { readFileSync, renameSync, unlinkSync, writeFileSync } from 'node:fs';

export const MAGIC = Buffer.from('T2DTNSR1', 'ascii');

export type Dtype = 'f32' | 'f16' | 'u8' | 'i32';

const DTYPE_CODE: Record<Dtype, number> = { f32: 0, f16: 1, u8: 2, i32: 3 };
const CODE_DTYPE: Record<number, Dtype> = { 0: 'f32', 1: 'f16', 2: 'u8', 3: 'i32' };
const ITEM_SIZE: Record<Dtype, number> = { f32: 4, f16: 2, u8: 1, i32: 4 };

export class ContainerError extends Error {}

export interface TensorRecord {
  name: string;
  dtype: Dtype;
  shape: number[];
  payload: Buffer;
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function checkRecord(rec: TensorRecord): void {
  const expected = elementCount(rec.shape) * ITEM_SIZE[rec.dtype];
  if (rec.payload.length !== expected) {
    throw new ContainerError(
      `record '${rec.name}': payload is ${rec.payload.length} bytes, ` +
        `expected ${expected} for shape [${rec.shape}] dtype ${rec.dtype}`,
    );
  }
}

// ---------------------------------------------------------------- encoding

/** IEEE 754 binary16 from a float, round to nearest even. */
export function toHalfBits(value: number): number {
  const f32 = new DataView(new ArrayBuffer(4));
  f32.setFloat32(0, value, true);
  const bits = f32.getUint32(0, true);
  const sign = (bits >>> 16) & 0x8000;
  const exp = (bits >>> 23) & 0xff;
  const frac = bits & 0x7fffff;

  if (exp === 0xff) {
    // inf / nan; keep a nan payload bit so nan stays nan
    return sign | 0x7c00 | (frac ? 0x0200 : 0);
  }
  // re-bias 127 -> 15
  const e = exp - 127 + 15;
  if (e >= 0x1f) return sign | 0x7c00; // overflow to inf
  if (e <= 0) {
    if (e < -10) return sign; // underflow to zero
    // subnormal: shift the implicit leading 1 into the fraction
    const full = frac | 0x800000;
    const shift = 14 - e;
    const half = full >>> shift;
    const rem = full & ((1 << shift) - 1);
    const halfway = 1 << (shift - 1);
    if (rem > halfway || (rem === halfway && (half & 1))) return sign | (half + 1);
    return sign | half;
  }
  let half = (e << 10) | (frac >>> 13);
  const rem = frac & 0x1fff;
  if (rem > 0x1000 || (rem === 0x1000 && (half & 1))) half += 1; // may carry into exp; that is correct
  return sign | half;
}

export function halfBitsToNumber(bits: number): number {
  const sign = bits & 0x8000 ? -1 : 1;
  const exp = (bits >>> 10) & 0x1f;
  const frac = bits & 0x3ff;
  if (exp === 0x1f) return frac ? NaN : sign * Infinity;
  if (exp === 0) return sign * frac * 2 ** -24;
  return sign * (1024 + frac) * 2 ** (exp - 25);
}

export function f32Record(name: string, shape: number[], values: ArrayLike<number>): TensorRecord {
  const payload = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) payload.writeFloatLE(values[i], i * 4);
  const rec = { name, dtype: 'f32' as const, shape, payload };
  checkRecord(rec);
  return rec;
}

export function f16Record(name: string, shape: number[], values: ArrayLike<number>): TensorRecord {
  const payload = Buffer.alloc(values.length * 2);
  for (let i = 0; i < values.length; i++) payload.writeUInt16LE(toHalfBits(values[i]), i * 2);
  const rec = { name, dtype: 'f16' as const, shape, payload };
  checkRecord(rec);
  return rec;
}

export function i32Record(name: string, shape: number[], values: ArrayLike<number>): TensorRecord {
  const payload = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) payload.writeInt32LE(values[i], i * 4);
  const rec = { name, dtype: 'i32' as const, shape, payload };
  checkRecord(rec);
  return rec;
}

export function textRecord(name: string, value: string): TensorRecord {
  const payload = Buffer.from(value, 'utf-8');
  return { name, dtype: 'u8', shape: [payload.length], payload };
}

export function recordToFloats(rec: TensorRecord): Float64Array {
  const n = elementCount(rec.shape);
  const out = new Float64Array(n);
  switch (rec.dtype) {
    case 'f32':
      for (let i = 0; i < n; i++) out[i] = rec.payload.readFloatLE(i * 4);
      return out;
    case 'f16':
      for (let i = 0; i < n; i++) out[i] = halfBitsToNumber(rec.payload.readUInt16LE(i * 2));
      return out;
    case 'i32':
      for (let i = 0; i < n; i++) out[i] = rec.payload.readInt32LE(i * 4);
      return out;
    case 'u8':
      for (let i = 0; i < n; i++) out[i] = rec.payload[i];
      return out;
  }
}

export function recordToText(rec: TensorRecord): string {
  if (rec.dtype !== 'u8') throw new ContainerError(`record '${rec.name}' is not a text record`);
  return rec.payload.toString('utf-8');
}

// -------------------------------------------------------------------- file io

export function writeContainer(path: string, records: TensorRecord[]): void {
  const seen = new Set<string>();
  for (const rec of records) {
    if (seen.has(rec.name)) throw new ContainerError(`duplicate record names: ['${rec.name}']`);
    seen.add(rec.name);
    checkRecord(rec);
  }

  const parts: Buffer[] = [MAGIC];
  const count = Buffer.alloc(4);
  count.writeUInt32LE(records.length, 0);
  parts.push(count);
  for (const rec of records) {
    const name = Buffer.from(rec.name, 'utf-8');
    const head = Buffer.alloc(4 + name.length + 2 + 8 * rec.shape.length);
    let pos = head.writeUInt32LE(name.length, 0);
    pos += name.copy(head, pos);
    pos = head.writeUInt8(DTYPE_CODE[rec.dtype], pos);
    pos = head.writeUInt8(rec.shape.length, pos);
    for (const dim of rec.shape) pos = head.writeBigUInt64LE(BigInt(dim), pos);
    parts.push(head, rec.payload);
  }

  // Atomic: readers never observe a partially written file.
  const tmp = `${path}.tmp.${process.pid}.${randomBytes(4).toString('hex')}`;
  writeFileSync(tmp, Buffer.concat(parts));
  try {
    renameSync(tmp, path);
  } catch (err) {
    unlinkSync(tmp);
    throw err;
  }
}

export function readContainer(path: string): TensorRecord[] {
  const blob = readFileSync(path);
  if (blob.length < 8 || !blob.subarray(0, 8).equals(MAGIC)) {
    throw new ContainerError(`unrecognized format: ${path}`);
  }
  let pos = 8;
  const take = (n: number): Buffer => {
    if (pos + n > blob.length) throw new ContainerError(`corrupt container: ${path}`);
    const chunk = blob.subarray(pos, pos + n);
    pos += n;
    return chunk;
  };

  const count = take(4).readUInt32LE(0);
  const records: TensorRecord[] = [];
  for (let r = 0; r < count; r++) {
    const nameLen = take(4).readUInt32LE(0);
    const name = take(nameLen).toString('utf-8');
    const code = take(1).readUInt8(0);
    const rank = take(1).readUInt8(0);
    if (!(code in CODE_DTYPE)) {
      throw new ContainerError(`unsupported dtype code ${code} in record '${name}'`);
    }
    const dtype = CODE_DTYPE[code];
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) shape.push(Number(take(8).readBigUInt64LE(0)));
    const payload = Buffer.from(take(elementCount(shape) * ITEM_SIZE[dtype]));
    records.push({ name, dtype, shape, payload });
  }
  if (pos !== blob.length) throw new ContainerError(`corrupt container: ${path}`);
  return records;
}

export function readRecordMap(path: string): Map<string, TensorRecord> {
  const out = new Map<string, TensorRecord>();
  for (const rec of readContainer(path)) {
    if (out.has(rec.name)) throw new ContainerError(`duplicate record names: ['${rec.name}']`);
    out.set(rec.name, rec);
  }
  return out;
}
