import { describe, expect, test } from 'vitest';

import { defaultManifest, manifestJson, textForward, visionForward } from '../src/backbone';
import { RgbImage } from '../src/image';
import { Rng, contentSeed } from '../src/rng';

const SEED = 27644;

function noiseImage(width: number, height: number, tag: string): RgbImage {
  const rng = new Rng(contentSeed(`img/${SEED}/${tag}`));
  const data = new Float64Array(width * height * 3);
  for (let i = 0; i < data.length; i++) data[i] = rng.nextUnit();
  return { width, height, data };
}

describe('vision stand-in', () => {
  const m = defaultManifest();

  test('grid geometry follows the patch size', () => {
    const out = visionForward(m, noiseImage(448, 448, 'a'));
    expect([out.gridH, out.gridW]).toEqual([32, 32]);
    expect(out.features.length).toBe(32 * 32 * m.d_v);
    expect(out.attnLogits.length).toBe(m.n_heads * 32 * 32);
    expect(out.clsFeature.length).toBe(m.d_v);
  });

  test('non-multiple sizes are rejected', () => {
    expect(() => visionForward(m, noiseImage(450, 448, 'b'))).toThrow(/multiple of patch size/);
  });

  test('frozen: the same pixels give bit-identical tensors', () => {
    const img = noiseImage(56, 56, 'c');
    const first = visionForward(m, img);
    const second = visionForward(m, img);
    expect(second.features).toEqual(first.features);
    expect(second.attnLogits).toEqual(first.attnLogits);
  });

  test('different pixels give different tensors', () => {
    const a = visionForward(m, noiseImage(56, 56, 'd'));
    const b = visionForward(m, noiseImage(56, 56, 'e'));
    expect(a.features).not.toEqual(b.features);
  });

  test('every logit is finite', () => {
    const out = visionForward(m, noiseImage(56, 56, 'f'));
    for (const v of out.attnLogits) expect(Number.isFinite(v)).toBe(true);
  });

  test('cls feature is the patch mean', () => {
    const out = visionForward(m, noiseImage(28, 28, 'g'));
    const n = out.gridH * out.gridW;
    for (const c of [0, 100, m.d_v - 1]) {
      let sum = 0;
      for (let i = 0; i < n; i++) sum += out.features[i * m.d_v + c];
      expect(out.clsFeature[c]).toBeCloseTo(sum / n, 12);
    }
  });
});

describe('text stand-in', () => {
  const m = defaultManifest();

  test('dimension and determinism', () => {
    const v = textForward(m, 'a photo of a dog');
    expect(v.length).toBe(512);
    expect(textForward(m, 'a photo of a dog')).toEqual(v);
  });

  test('distinct strings embed differently', () => {
    expect(textForward(m, 'dog')).not.toEqual(textForward(m, 'cat'));
  });

  test('empty string is an error', () => {
    expect(() => textForward(m, '')).toThrow(/empty string/);
  });
});

test('manifest json is stable and key-sorted', () => {
  const m = defaultManifest();
  const json = manifestJson(m);
  expect(json).toBe(manifestJson(defaultManifest()));
  const keys = Object.keys(JSON.parse(json));
  expect(keys).toEqual([...keys].sort());
});
