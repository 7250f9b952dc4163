/**
 * PNG loading and the resize protocol.
 *
 * The grid geometry contract: the shorter image side is resized to the
 * configured size with bilinear interpolation (half-pixel centers, the
 * same convention the engine upsamples with), then the image is center
 * cropped to a square, which is a multiple of the patch size by
 * construction (448 = 32 * 14). The engine checks resized_size / P
 * against the stored grid, so this file decides whether containers
 * validate at all.
 */

import { readFileSync } from 'node:fs';
import { PNG } from 'pngjs';

export interface RgbImage {
  width: number;
  height: number;
  /** row-major H*W*3, values in [0, 1] */
  data: Float64Array;
}

export function readPngRgb(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path));
  const { width, height, data } = png;
  const out = new Float64Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    out[p * 3] = data[p * 4] / 255;
    out[p * 3 + 1] = data[p * 4 + 1] / 255;
    out[p * 3 + 2] = data[p * 4 + 2] / 255;
  }
  return { width, height, data: out };
}

/** Quantized back to bytes; the content hash must not depend on float noise. */
export function toBytes(img: RgbImage): Buffer {
  const buf = Buffer.alloc(img.data.length);
  for (let i = 0; i < img.data.length; i++) {
    buf[i] = Math.max(0, Math.min(255, Math.round(img.data[i] * 255)));
  }
  return buf;
}

export function bilinearResize(img: RgbImage, width: number, height: number): RgbImage {
  const out = new Float64Array(width * height * 3);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const ys = Math.min(Math.max((y + 0.5) * sy - 0.5, 0), img.height - 1);
    const y0 = Math.floor(ys);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const fy = ys - y0;
    for (let x = 0; x < width; x++) {
      const xs = Math.min(Math.max((x + 0.5) * sx - 0.5, 0), img.width - 1);
      const x0 = Math.floor(xs);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const fx = xs - x0;
      for (let c = 0; c < 3; c++) {
        const a = img.data[(y0 * img.width + x0) * 3 + c];
        const b = img.data[(y0 * img.width + x1) * 3 + c];
        const d = img.data[(y1 * img.width + x0) * 3 + c];
        const e = img.data[(y1 * img.width + x1) * 3 + c];
        const top = a + (b - a) * fx;
        const bot = d + (e - d) * fx;
        out[(y * width + x) * 3 + c] = top + (bot - top) * fy;
      }
    }
  }
  return { width, height, data: out };
}

export function centerCrop(img: RgbImage, width: number, height: number): RgbImage {
  if (width > img.width || height > img.height) {
    throw new Error(`crop ${width}x${height} exceeds image ${img.width}x${img.height}`);
  }
  const ox = Math.floor((img.width - width) / 2);
  const oy = Math.floor((img.height - height) / 2);
  const out = new Float64Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    const src = ((y + oy) * img.width + ox) * 3;
    out.set(img.data.subarray(src, src + width * 3), y * width * 3);
  }
  return { width, height, data: out };
}

/** Shorter side to `size`, center crop to size x size. */
export function preprocess(img: RgbImage, size: number): RgbImage {
  const scale = size / Math.min(img.width, img.height);
  const rw = Math.max(size, Math.round(img.width * scale));
  const rh = Math.max(size, Math.round(img.height * scale));
  return centerCrop(bilinearResize(img, rw, rh), size, size);
}
