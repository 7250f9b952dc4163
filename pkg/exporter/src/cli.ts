#!/usr/bin/env node
/**
 * Usage:
 *   patchlink-export images --out DIR [--features-dtype f16|f32] img.png [...]
 *   patchlink-export text --out FILE string [...]
 *   patchlink-export dataset --images DIR --out DIR [--captions FILE] [--force]
 *
 * `--captions` takes a JSON object mapping image id (file stem) to a list
 * of caption strings. Exit status is nonzero when any file fails.
 */

import { parseArgs } from 'node:util';
import { basename, join } from 'node:path';
import { mkdirSync } from 'node:fs';

import { defaultManifest } from './backbone.js';
import { exportDataset, exportImage, exportText, readCaptionsFile } from './export.js';

function usage(): never {
  console.error('usage: patchlink-export images|text|dataset [options]');
  process.exit(2);
}

export function main(argv: string[]): number {
  const mode = argv[0];
  if (!mode || !['images', 'text', 'dataset'].includes(mode)) usage();

  const { values, positionals } = parseArgs({
    args: argv.slice(1),
    allowPositionals: true,
    options: {
      out: { type: 'string' },
      images: { type: 'string' },
      captions: { type: 'string' },
      force: { type: 'boolean', default: false },
      'features-dtype': { type: 'string', default: 'f16' },
    },
  });
  if (!values.out) usage();
  const dtype = values['features-dtype'];
  if (dtype !== 'f16' && dtype !== 'f32') usage();
  const manifest = defaultManifest();

  if (mode === 'text') {
    if (positionals.length === 0) usage();
    exportText(positionals, manifest, values.out);
    console.log(`${values.out}: ${positionals.length} strings embedded`);
    return 0;
  }

  if (mode === 'images') {
    if (positionals.length === 0) usage();
    mkdirSync(values.out, { recursive: true });
    let failures = 0;
    for (const path of positionals) {
      const outPath = join(values.out, basename(path).replace(/\.[^.]+$/, '.t2d'));
      try {
        exportImage(path, manifest, outPath, { featuresDtype: dtype });
        console.log(`${path} -> ${outPath}`);
      } catch (err) {
        failures += 1;
        console.error(`${path}: ${err instanceof Error ? err.message : err}`);
      }
    }
    return failures ? 1 : 0;
  }

  // dataset
  if (!values.images) usage();
  const captions = readCaptionsFile(values.captions);
  const result = exportDataset(values.images, captions, manifest, values.out, {
    force: values.force,
    featuresDtype: dtype,
  });
  console.log(
    `${result.written.length} written, ${result.skipped.length} skipped, ` +
      `${result.failed.length} failed`,
  );
  for (const { file, error } of result.failed) console.error(`${file}: ${error}`);
  return result.failed.length ? 1 : 0;
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('cli.js') || entry.endsWith('cli.ts')) {
  process.exit(main(process.argv.slice(2)));
}
