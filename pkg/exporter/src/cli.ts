#!/usr/bin/env node
/**
 * CLI entry: fsood-export --id-train DIR [--id-test DIR] [--csid name=DIR]...
 *            [--near-ood name=DIR]... [--far-ood name=DIR]...
 *            --out DIR [--encoder grid-rp-64] [--precision f32|f64]
 *            [--locals] [--class-map file.json]
 */

import * as fs from 'node:fs';

import { Precision } from './emb1.js';
import { ExportJob, runExport } from './exporter.js';

function usage(): never {
  console.error(
    'usage: fsood-export --id-train DIR [--id-test DIR] [--csid name=DIR]... ' +
      '[--near-ood name=DIR]... [--far-ood name=DIR]... --out DIR ' +
      '[--encoder grid-rp-64] [--precision f32|f64] [--locals] [--class-map FILE]',
  );
  process.exit(2);
}

export function parseArgs(argv: string[]): ExportJob {
  const splits: Record<string, string> = {};
  let outDir = '';
  let encoderId = 'grid-rp-64';
  let precision: Precision = 'f32';
  let withLocals = false;
  let classMap: Record<string, number> | null = null;

  const named = (role: string, value: string) => {
    const eq = value.indexOf('=');
    if (eq <= 0) usage();
    splits[`${role}:${value.slice(0, eq)}`] = value.slice(eq + 1);
  };

  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      if (i + 1 >= argv.length) usage();
      return argv[++i];
    };
    switch (arg) {
      case '--id-train':
        splits['id_train'] = next();
        break;
      case '--id-test':
        splits['id_test'] = next();
        break;
      case '--csid':
        named('csid', next());
        break;
      case '--near-ood':
        named('near_ood', next());
        break;
      case '--far-ood':
        named('far_ood', next());
        break;
      case '--out':
        outDir = next();
        break;
      case '--encoder':
        encoderId = next();
        break;
      case '--precision': {
        const p = next();
        if (p !== 'f32' && p !== 'f64') usage();
        precision = p;
        break;
      }
      case '--locals':
        withLocals = true;
        break;
      case '--class-map':
        classMap = JSON.parse(fs.readFileSync(next(), 'utf-8'));
        break;
      default:
        usage();
    }
  }
  if (!splits['id_train'] || !outDir) usage();
  return { splits, classMap, encoderId, precision, withLocals, outDir };
}

export function main(argv: string[]): number {
  try {
    const stats = runExport(parseArgs(argv));
    for (const s of stats) {
      console.log(`${s.role}: ${s.count} samples -> ${s.file}`);
    }
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? `${err.constructor.name}: ${err.message}` : err}`);
    return 1;
  }
}

if (process.argv[1] && /cli\.(ts|js)$/.test(process.argv[1])) {
  process.exit(main(process.argv.slice(2)));
}
