/**
 * Minimal image decoding: binary PPM (P6) and PGM (P5), 8-bit.
 *
 * The exporter's deterministic encoder only needs raw pixel intensities,
 * and netpbm keeps the tool dependency-free. Anything else is rejected
 * with a clear message.
 */

export class ImageDecodeError extends Error {}

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major grayscale in [0, 1]. */
  pixels: Float64Array;
}

function parseHeader(buf: Buffer): { magic: string; values: number[]; dataStart: number } {
  // magic, then 3 ASCII integers (width, height, maxval) separated by
  // whitespace/comments, then a single whitespace byte before the payload
  const magic = buf.toString('ascii', 0, 2);
  let pos = 2;
  const values: number[] = [];
  while (values.length < 3) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (pos < buf.length && buf[pos] === 0x23) {
      // '#' comment runs to end of line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && /\d/.test(String.fromCharCode(buf[pos]))) pos++;
    if (start === pos) throw new ImageDecodeError('malformed netpbm header');
    values.push(parseInt(buf.toString('ascii', start, pos), 10));
  }
  return { magic, values, dataStart: pos + 1 };
}

export function decodeNetpbm(buf: Buffer, path = '<buffer>'): GrayImage {
  if (buf.length < 2) throw new ImageDecodeError(`${path}: empty image file`);
  const magic = buf.toString('ascii', 0, 2);
  if (magic !== 'P5' && magic !== 'P6') {
    throw new ImageDecodeError(
      `${path}: unsupported image format ${JSON.stringify(magic)} (need binary PGM/PPM)`,
    );
  }
  const { values, dataStart } = parseHeader(buf);
  const [width, height, maxval] = values;
  if (maxval <= 0 || maxval > 255) {
    throw new ImageDecodeError(`${path}: unsupported maxval ${maxval}`);
  }
  const channels = magic === 'P6' ? 3 : 1;
  const expected = width * height * channels;
  if (buf.length - dataStart < expected) {
    throw new ImageDecodeError(`${path}: truncated pixel payload`);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < width * height; i++) {
    if (channels === 1) {
      pixels[i] = buf[dataStart + i] / maxval;
    } else {
      const o = dataStart + 3 * i;
      // ITU-R BT.601 luma weights
      pixels[i] = (0.299 * buf[o] + 0.587 * buf[o + 1] + 0.114 * buf[o + 2]) / maxval;
    }
  }
  return { width, height, pixels };
}

/** Box-average resample onto a side x side grid, row-major in [0, 1]. */
export function resampleToGrid(img: GrayImage, side: number): Float64Array {
  const out = new Float64Array(side * side);
  for (let gy = 0; gy < side; gy++) {
    const y0 = Math.floor((gy * img.height) / side);
    const y1 = Math.max(y0 + 1, Math.floor(((gy + 1) * img.height) / side));
    for (let gx = 0; gx < side; gx++) {
      const x0 = Math.floor((gx * img.width) / side);
      const x1 = Math.max(x0 + 1, Math.floor(((gx + 1) * img.width) / side));
      let sum = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) sum += img.pixels[y * img.width + x];
      }
      out[gy * side + gx] = sum / ((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}
