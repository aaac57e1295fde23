/**
 * Deterministic embedding math for the synthetic provider.
 *
 * Vectors come from a hash-seeded PRNG with an Irwin-Hall pseudo-normal
 * (sums of uniforms), so generation uses only +,-,*,/ and sqrt and is
 * bit-stable across runs.
 */

import { createHash } from "node:crypto";

export function seedFrom(tag: string): number {
  const digest = createHash("sha256").update(tag, "utf-8").digest();
  return digest.readUInt32LE(0);
}

/** mulberry32: tiny deterministic PRNG over 32-bit state. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function pseudoNormal(rand: () => number): number {
  // Irwin-Hall with n=12: mean 6, variance 1
  let sum = 0;
  for (let i = 0; i < 12; i++) sum += rand();
  return sum - 6.0;
}

export function hashUnit(tag: string, dim: number): Float64Array {
  const rand = mulberry32(seedFrom(tag));
  const v = new Float64Array(dim);
  let normSq = 0;
  for (let i = 0; i < dim; i++) {
    v[i] = pseudoNormal(rand);
    normSq += v[i] * v[i];
  }
  const norm = Math.sqrt(normSq);
  for (let i = 0; i < dim; i++) v[i] /= norm;
  return v;
}

export function addScaled(base: Float64Array, extra: Float64Array, scale: number): Float64Array {
  const out = new Float64Array(base.length);
  for (let i = 0; i < base.length; i++) out[i] = base[i] + scale * extra[i];
  return out;
}

export function normalized32(v: Float64Array): Float32Array {
  let normSq = 0;
  for (let i = 0; i < v.length; i++) normSq += v[i] * v[i];
  const norm = Math.sqrt(normSq);
  const out = new Float32Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

/** Base64 of little-endian float32 values (the wire format). */
export function encodeEmbedding(vec: Float32Array): string {
  const buf = Buffer.alloc(vec.length * 4);
  for (let i = 0; i < vec.length; i++) buf.writeFloatLE(vec[i], i * 4);
  return buf.toString("base64");
}

export function decodeEmbedding(payload: string): Float32Array {
  const buf = Buffer.from(payload, "base64");
  const out = new Float32Array(buf.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}
