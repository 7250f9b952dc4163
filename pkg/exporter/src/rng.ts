/**
 * Deterministic random streams seeded by content hashes.
 *
 * The stand-in backbone must behave like frozen weights: the same bytes in,
 * the same tensors out, on every machine. Everything routes through sha256
 * of the inputs, so there is no global state and no platform dependence.
 */

import { createHash } from 'node:crypto';

export function contentSeed(...parts: (string | Buffer)[]): Buffer {
  const h = createHash('sha256');
  for (const part of parts) {
    const buf = typeof part === 'string' ? Buffer.from(part, 'utf-8') : part;
    // length-prefix each part so ('ab','c') and ('a','bc') differ
    const len = Buffer.alloc(4);
    len.writeUInt32LE(buf.length, 0);
    h.update(len);
    h.update(buf);
  }
  return h.digest();
}

/** xoshiro128** over four u32 words taken from a seed digest. */
export class Rng {
  private s0: number;
  private s1: number;
  private s2: number;
  private s3: number;
  private spare: number | null = null;

  constructor(seed: Buffer) {
    this.s0 = seed.readUInt32LE(0);
    this.s1 = seed.readUInt32LE(4);
    this.s2 = seed.readUInt32LE(8);
    this.s3 = seed.readUInt32LE(12);
    if ((this.s0 | this.s1 | this.s2 | this.s3) === 0) this.s0 = 1; // all-zero state is absorbing
  }

  nextU32(): number {
    const rotl = (x: number, k: number) => ((x << k) | (x >>> (32 - k))) >>> 0;
    const result = (Math.imul(rotl(Math.imul(this.s1, 5) >>> 0, 7), 9) >>> 0) >>> 0;
    const t = (this.s1 << 9) >>> 0;
    this.s2 = (this.s2 ^ this.s0) >>> 0;
    this.s3 = (this.s3 ^ this.s1) >>> 0;
    this.s1 = (this.s1 ^ this.s2) >>> 0;
    this.s0 = (this.s0 ^ this.s3) >>> 0;
    this.s2 = (this.s2 ^ t) >>> 0;
    this.s3 = rotl(this.s3, 11);
    return result;
  }

  /** uniform in (0, 1], 32-bit resolution */
  nextUnit(): number {
    return (this.nextU32() + 1) / 4294967296;
  }

  /** standard normal via Box-Muller; caches the paired draw */
  nextGaussian(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    const r = Math.sqrt(-2 * Math.log(this.nextUnit()));
    const theta = 2 * Math.PI * this.nextUnit();
    this.spare = r * Math.sin(theta);
    return r * Math.cos(theta);
  }

  fillGaussian(out: Float64Array, scale = 1): Float64Array {
    for (let i = 0; i < out.length; i++) out[i] = this.nextGaussian() * scale;
    return out;
  }
}
