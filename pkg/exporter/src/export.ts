/**
 * Container assembly: one image or string list in, one `.t2d` file out.
 *
 * Record names and shapes here are the engine's reader contract
 * (`features`, `attn_logits`, `image_id`, `image_size`, `resized_size`,
 * `patch_size`, `cls_feature`, `manifest`, `caption/{i}/...`). Features go
 * to disk as f16 by default, roughly halving container size; the engine
 * widens them back on read. Attention logits stay f32.
 */

import { existsSync, mkdirSync, readFileSync, readdirSync, writeFileSync } from 'node:fs';
import { basename, join } from 'node:path';

import {
  TensorRecord,
  f16Record,
  f32Record,
  i32Record,
  textRecord,
  writeContainer,
} from './container.js';
import { ExportManifest, manifestJson, textForward, visionForward } from './backbone.js';
import { preprocess, readPngRgb } from './image.js';

export interface ExportImageOptions {
  imageId?: string;
  captions?: string[];
  featuresDtype?: 'f16' | 'f32';
}

export function exportImage(
  imagePath: string,
  manifest: ExportManifest,
  outPath: string,
  options: ExportImageOptions = {},
): void {
  const original = readPngRgb(imagePath);
  const resized = preprocess(original, manifest.resize);
  const out = visionForward(manifest, resized);

  const featRecord = options.featuresDtype === 'f32' ? f32Record : f16Record;
  const records: TensorRecord[] = [
    featRecord('features', [out.gridH, out.gridW, manifest.d_v], out.features),
    f32Record('attn_logits', [manifest.n_heads, out.gridH, out.gridW], out.attnLogits),
    textRecord('image_id', options.imageId ?? basename(imagePath).replace(/\.[^.]+$/, '')),
    i32Record('image_size', [2], [original.height, original.width]),
    i32Record('resized_size', [2], [resized.height, resized.width]),
    i32Record('patch_size', [1], [manifest.patch_size]),
  ];
  for (const [i, caption] of (options.captions ?? []).entries()) {
    records.push(textRecord(`caption/${i}/text`, caption));
    records.push(f32Record(`caption/${i}/embedding`, [manifest.d_t], textForward(manifest, caption)));
  }
  records.push(f32Record('cls_feature', [manifest.d_v], out.clsFeature));
  records.push(textRecord('manifest', manifestJson(manifest)));
  writeContainer(outPath, records);
}

export function exportText(strings: string[], manifest: ExportManifest, outPath: string): void {
  const records: TensorRecord[] = [];
  const seen = new Set<string>();
  for (const s of strings) {
    if (seen.has(s)) continue; // identical strings embed identically; keep one record
    seen.add(s);
    records.push(f32Record(s, [manifest.d_t], textForward(manifest, s)));
  }
  records.push(textRecord('manifest', manifestJson(manifest)));
  writeContainer(outPath, records);
}

export interface DatasetResult {
  written: string[];
  skipped: string[];
  failed: { file: string; error: string }[];
}

export interface ExportDatasetOptions extends ExportImageOptions {
  force?: boolean;
}

/**
 * Export every PNG under imagesDir. Existing containers are skipped so an
 * interrupted run resumes where it stopped; `force` re-exports everything.
 * Failures are collected per file, never fatal for the batch.
 */
export function exportDataset(
  imagesDir: string,
  captionsByImageId: Record<string, string[]>,
  manifest: ExportManifest,
  outDir: string,
  options: ExportDatasetOptions = {},
): DatasetResult {
  mkdirSync(outDir, { recursive: true });
  writeFileSync(join(outDir, 'manifest.json'), manifestJson(manifest) + '\n');

  const result: DatasetResult = { written: [], skipped: [], failed: [] };
  const images = readdirSync(imagesDir)
    .filter((f) => f.toLowerCase().endsWith('.png'))
    .sort();
  for (const file of images) {
    const stem = file.replace(/\.[^.]+$/, '');
    const outPath = join(outDir, `${stem}.t2d`);
    if (!options.force && existsSync(outPath)) {
      result.skipped.push(file);
      continue;
    }
    try {
      exportImage(join(imagesDir, file), manifest, outPath, {
        ...options,
        imageId: stem,
        captions: captionsByImageId[stem] ?? [],
      });
      result.written.push(file);
    } catch (err) {
      result.failed.push({ file, error: err instanceof Error ? err.message : String(err) });
    }
  }
  return result;
}

export function readCaptionsFile(path: string | undefined): Record<string, string[]> {
  if (!path) return {};
  const parsed = JSON.parse(readFileSync(path, 'utf-8'));
  for (const [key, value] of Object.entries(parsed)) {
    if (!Array.isArray(value) || value.some((v) => typeof v !== 'string')) {
      throw new Error(`captions file: entry '${key}' is not a list of strings`);
    }
  }
  return parsed;
}
