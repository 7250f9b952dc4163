/**
 * Frozen synthetic backbone.
 *
 * No pretrained weights can be downloaded where this runs, so the two
 * encoders are deterministic stand-ins with the real models' interface
 * and geometry: a vision encoder producing a patch-feature grid plus
 * per-head CLS attention logits (register and CLS columns already
 * dropped), and a text encoder producing one 512-wide embedding per
 * string. "Frozen" is meant literally. Every tensor is a pure function
 * of the manifest identity and the input bytes, hashed, never sampled
 * from ambient randomness, so repeated export is bit-identical and
 * containers are honest fixtures for everything downstream of the
 * backbones.
 *
 * The structure is not pure noise. Patch features mix a fixed linear
 * embedding of the patch's mean color with hash noise, and each attention
 * head prefers its own color direction, so nearby patches of similar
 * color get similar features and heads highlight coherent regions. That
 * keeps the engine's cosine maps and pooled heads meaningful on real
 * pictures without pretending to be a real backbone.
 */

import { Rng, contentSeed } from './rng.js';
import { RgbImage, toBytes } from './image.js';

export interface ExportManifest {
  format_version: 1;
  vision_backbone: string;
  text_backbone: string;
  patch_size: number;
  d_v: number;
  d_t: number;
  n_heads: number;
  resize: number;
  resize_policy: string;
  attention_convention: string;
}

export function defaultManifest(): ExportManifest {
  return {
    format_version: 1,
    vision_backbone: 'synthetic-vit-b14-registers',
    text_backbone: 'synthetic-vit-b16-text',
    patch_size: 14,
    d_v: 768,
    d_t: 512,
    n_heads: 12,
    resize: 448,
    resize_policy: 'shorter-side-then-center-crop',
    attention_convention: 'pre-softmax CLS row, register and CLS columns dropped',
  };
}

/** Stable JSON for embedding in containers: sorted keys, no whitespace. */
export function manifestJson(m: ExportManifest): string {
  const sorted = Object.fromEntries(Object.entries(m).sort(([a], [b]) => (a < b ? -1 : 1)));
  return JSON.stringify(sorted);
}

export interface VisionOutput {
  gridH: number;
  gridW: number;
  /** [gridH * gridW * d_v] */
  features: Float64Array;
  /** [n_heads * gridH * gridW] */
  attnLogits: Float64Array;
  /** [d_v] */
  clsFeature: Float64Array;
}

/** Fixed per-backbone color projection, the "weights" of the stand-in. */
function colorBasis(m: ExportManifest, dims: number, tag: string): Float64Array[] {
  const rng = new Rng(contentSeed(m.vision_backbone, tag));
  return [0, 1, 2].map(() => rng.fillGaussian(new Float64Array(dims)));
}

export function visionForward(m: ExportManifest, img: RgbImage): VisionOutput {
  const p = m.patch_size;
  if (img.width % p !== 0 || img.height % p !== 0) {
    throw new Error(`image ${img.width}x${img.height} is not a multiple of patch size ${p}`);
  }
  const gridW = img.width / p;
  const gridH = img.height / p;
  const nPatches = gridH * gridW;

  // patch mean colors
  const mean = new Float64Array(nPatches * 3);
  for (let gy = 0; gy < gridH; gy++) {
    for (let gx = 0; gx < gridW; gx++) {
      let r = 0;
      let g = 0;
      let b = 0;
      for (let dy = 0; dy < p; dy++) {
        for (let dx = 0; dx < p; dx++) {
          const off = ((gy * p + dy) * img.width + gx * p + dx) * 3;
          r += img.data[off];
          g += img.data[off + 1];
          b += img.data[off + 2];
        }
      }
      const at = (gy * gridW + gx) * 3;
      mean[at] = r / (p * p);
      mean[at + 1] = g / (p * p);
      mean[at + 2] = b / (p * p);
    }
  }

  const featBasis = colorBasis(m, m.d_v, 'feature-basis');
  const imageSeed = contentSeed(m.vision_backbone, `${img.width}x${img.height}`, toBytes(img));

  const features = new Float64Array(nPatches * m.d_v);
  const noise = new Float64Array(m.d_v);
  for (let i = 0; i < nPatches; i++) {
    const rng = new Rng(contentSeed(imageSeed, `patch/${i}`));
    rng.fillGaussian(noise, 0.05);
    for (let c = 0; c < m.d_v; c++) {
      features[i * m.d_v + c] =
        mean[i * 3] * featBasis[0][c] +
        mean[i * 3 + 1] * featBasis[1][c] +
        mean[i * 3 + 2] * featBasis[2][c] +
        noise[c];
    }
  }

  // Each head's logit is an affinity between the patch color and the
  // head's preferred direction, plus a little image-specific noise.
  const headBasis = colorBasis(m, m.n_heads, 'head-basis');
  const attnLogits = new Float64Array(m.n_heads * nPatches);
  const attnRng = new Rng(contentSeed(imageSeed, 'attn'));
  for (let i = 0; i < nPatches; i++) {
    for (let h = 0; h < m.n_heads; h++) {
      const score =
        mean[i * 3] * headBasis[0][h] +
        mean[i * 3 + 1] * headBasis[1][h] +
        mean[i * 3 + 2] * headBasis[2][h];
      attnLogits[h * nPatches + i] = 4 * score + 0.25 * attnRng.nextGaussian();
    }
  }

  const clsFeature = new Float64Array(m.d_v);
  for (let i = 0; i < nPatches; i++) {
    for (let c = 0; c < m.d_v; c++) clsFeature[c] += features[i * m.d_v + c];
  }
  for (let c = 0; c < m.d_v; c++) clsFeature[c] /= nPatches;

  return { gridH, gridW, features, attnLogits, clsFeature };
}

export function textForward(m: ExportManifest, text: string): Float64Array {
  if (text.length === 0) throw new Error('cannot embed an empty string');
  const rng = new Rng(contentSeed(m.text_backbone, text));
  return rng.fillGaussian(new Float64Array(m.d_t));
}
