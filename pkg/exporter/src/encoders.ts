/**
 * Deterministic image encoders.
 *
 * The default `grid-rp` family resamples an image onto a 16x16 luminance
 * grid, mean-centers it, and projects it through a fixed seeded random
 * matrix, then L2-normalizes. It is content-dependent, runs anywhere,
 * and reproduces bit-identical embeddings across runs, which is what the
 * pipeline contract needs. Heavyweight pretrained encoders can be added
 * behind the same interface.
 */

import { GrayImage, resampleToGrid } from './images.js';

export class EncoderLoadFailure extends Error {}

export interface Encoder {
  id: string;
  dim: number;
  /** Unit-norm global embedding. */
  encode(img: GrayImage): Float64Array;
  /** Unit-norm patch embeddings (2x2 quadrants). */
  encodeLocals(img: GrayImage): Float64Array[];
}

const GRID_SIDE = 16;

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: tiny deterministic PRNG over uint32 state. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function normalized(v: Float64Array): Float64Array {
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) {
    // perfectly uniform image after centering; fall back to a fixed axis
    const out = new Float64Array(v.length);
    out[0] = 1;
    return out;
  }
  const out = new Float64Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

class GridProjectionEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  private readonly projection: Float64Array; // dim x (side*side), row-major

  constructor(id: string, dim: number) {
    this.id = id;
    this.dim = dim;
    const rand = mulberry32(fnv1a(id));
    const cells = GRID_SIDE * GRID_SIDE;
    this.projection = new Float64Array(dim * cells);
    const scale = 1 / Math.sqrt(cells);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = (2 * rand() - 1) * scale;
    }
  }

  private project(grid: Float64Array): Float64Array {
    let mean = 0;
    for (const g of grid) mean += g;
    mean /= grid.length;
    const out = new Float64Array(this.dim);
    for (let d = 0; d < this.dim; d++) {
      let acc = 0;
      const row = d * grid.length;
      for (let c = 0; c < grid.length; c++) {
        acc += this.projection[row + c] * (grid[c] - mean);
      }
      out[d] = acc;
    }
    return normalized(out);
  }

  encode(img: GrayImage): Float64Array {
    return this.project(resampleToGrid(img, GRID_SIDE));
  }

  encodeLocals(img: GrayImage): Float64Array[] {
    const locals: Float64Array[] = [];
    const halfW = Math.max(1, Math.floor(img.width / 2));
    const halfH = Math.max(1, Math.floor(img.height / 2));
    for (const [qy, qx] of [[0, 0], [0, 1], [1, 0], [1, 1]] as const) {
      const x0 = qx * halfW;
      const y0 = qy * halfH;
      const w = qx === 1 ? img.width - halfW : halfW;
      const h = qy === 1 ? img.height - halfH : halfH;
      const pixels = new Float64Array(w * h);
      for (let y = 0; y < h; y++) {
        for (let x = 0; x < w; x++) {
          pixels[y * w + x] = img.pixels[(y0 + y) * img.width + (x0 + x)];
        }
      }
      locals.push(this.project(resampleToGrid({ width: w, height: h, pixels }, GRID_SIDE)));
    }
    return locals;
  }
}

export const LOCALS_PER_SAMPLE = 4;

/** Encoder ids: `grid-rp-<dim>`, e.g. grid-rp-64. */
export function loadEncoder(id: string): Encoder {
  const match = /^grid-rp-(\d+)$/.exec(id);
  if (match) {
    const dim = parseInt(match[1], 10);
    if (dim < 1 || dim > 4096) {
      throw new EncoderLoadFailure(`encoder dimension out of range in ${JSON.stringify(id)}`);
    }
    return new GridProjectionEncoder(id, dim);
  }
  throw new EncoderLoadFailure(
    `unknown encoder ${JSON.stringify(id)}; available: grid-rp-<dim>`,
  );
}
