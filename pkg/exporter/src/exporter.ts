/**
 * Walks labeled image folders, encodes every image, and writes one EMB1
 * file per split plus a manifest the detection pipeline consumes.
 *
 * Labeled splits (id_train, id_test, csid:*) expect root/<class>/<image>;
 * OOD splits (near_ood:*, far_ood:*) may nest arbitrarily and always get
 * label -1. File order is the lexicographic path sort, so re-runs on
 * unchanged inputs are byte-identical.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { EmbRecord, Precision, encodeEmb1 } from './emb1.js';
import { Encoder, LOCALS_PER_SAMPLE, loadEncoder } from './encoders.js';
import { decodeNetpbm } from './images.js';

export class MissingClassFolder extends Error {}
export class ExportError extends Error {}

export interface ExportJob {
  /** split role -> image root directory */
  splits: Record<string, string>;
  /** class name -> index in [0, C); null derives it from sorted folder names */
  classMap: Record<string, number> | null;
  encoderId: string;
  precision: Precision;
  withLocals: boolean;
  outDir: string;
}

export interface SplitStats {
  role: string;
  file: string;
  count: number;
  labelCounts: Record<string, number>;
}

const LABELED_ROLES = /^(id_train|id_test|csid:)/;

function listImageFiles(dir: string): string[] {
  const out: string[] = [];
  const walk = (d: string) => {
    for (const entry of fs.readdirSync(d, { withFileTypes: true }).sort((a, b) =>
      a.name < b.name ? -1 : a.name > b.name ? 1 : 0,
    )) {
      const full = path.join(d, entry.name);
      if (entry.isDirectory()) walk(full);
      else if (/\.(ppm|pgm)$/i.test(entry.name)) out.push(full);
    }
  };
  walk(dir);
  return out.sort();
}

export function deriveClassMap(root: string): Record<string, number> {
  const names = fs
    .readdirSync(root, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  const map: Record<string, number> = {};
  names.forEach((name, i) => (map[name] = i));
  return map;
}

function validateClassMap(map: Record<string, number>): void {
  const indices = Object.values(map).sort((a, b) => a - b);
  if (indices.length === 0) throw new ExportError('class map is empty');
  indices.forEach((v, i) => {
    if (v !== i) throw new ExportError(`class indices must cover [0, C), got ${indices}`);
  });
}

function encodeSplit(
  role: string,
  root: string,
  classMap: Record<string, number>,
  encoder: Encoder,
  withLocals: boolean,
): { records: EmbRecord[]; labelCounts: Record<string, number> } {
  if (!fs.existsSync(root) || !fs.statSync(root).isDirectory()) {
    throw new ExportError(`split ${role}: image root ${root} is not a directory`);
  }
  const labeled = LABELED_ROLES.test(role);
  const records: EmbRecord[] = [];
  const labelCounts: Record<string, number> = {};
  if (labeled) {
    const folders = fs
      .readdirSync(root, { withFileTypes: true })
      .filter((e) => e.isDirectory())
      .map((e) => e.name)
      .sort();
    for (const name of folders) {
      if (!(name in classMap)) {
        throw new MissingClassFolder(`split ${role}: folder ${name} missing from class map`);
      }
    }
    for (const name of Object.keys(classMap).sort()) {
      if (!folders.includes(name)) {
        throw new MissingClassFolder(`split ${role}: no folder for class ${name}`);
      }
    }
    for (const file of listImageFiles(root)) {
      const cls = path.basename(path.dirname(file));
      const img = decodeNetpbm(fs.readFileSync(file), file);
      records.push({
        label: classMap[cls],
        vector: encoder.encode(img),
        ...(withLocals ? { locals: encoder.encodeLocals(img) } : {}),
      });
      labelCounts[cls] = (labelCounts[cls] ?? 0) + 1;
    }
  } else {
    for (const file of listImageFiles(root)) {
      const img = decodeNetpbm(fs.readFileSync(file), file);
      records.push({
        label: -1,
        vector: encoder.encode(img),
        ...(withLocals ? { locals: encoder.encodeLocals(img) } : {}),
      });
      labelCounts['-1'] = (labelCounts['-1'] ?? 0) + 1;
    }
  }
  return { records, labelCounts };
}

export function runExport(job: ExportJob): SplitStats[] {
  if (!('id_train' in job.splits)) {
    throw new ExportError('export needs an id_train split');
  }
  const encoder = loadEncoder(job.encoderId);
  const classMap = job.classMap ?? deriveClassMap(job.splits['id_train']);
  validateClassMap(classMap);
  fs.mkdirSync(job.outDir, { recursive: true });

  const stats: SplitStats[] = [];
  const manifestLines: string[] = [];
  for (const role of Object.keys(job.splits)) {
    const { records, labelCounts } = encodeSplit(
      role,
      job.splits[role],
      classMap,
      encoder,
      job.withLocals,
    );
    const fileName = role.replace(/:/g, '_') + '.emb';
    const filePath = path.join(job.outDir, fileName);
    fs.writeFileSync(
      filePath,
      encodeEmb1(records, encoder.dim, job.precision, job.withLocals ? LOCALS_PER_SAMPLE : 0),
    );
    manifestLines.push(`${role}=${fileName}`);
    stats.push({ role, file: filePath, count: records.length, labelCounts });
  }
  fs.writeFileSync(path.join(job.outDir, 'manifest.txt'), manifestLines.join('\n') + '\n');
  fs.writeFileSync(
    path.join(job.outDir, 'classes.json'),
    JSON.stringify(classMap, null, 2) + '\n',
  );
  return stats;
}
