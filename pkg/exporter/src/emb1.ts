/**
 * EMB1 binary embedding file writer/reader.
 *
 * Layout (little-endian):
 *   magic "EMB1" | u16 version (=1) | u32 dim | u64 count
 *   | u8 precision (0 = f32, 1 = f64) | u32 localsPerSample
 *   then per sample: i32 label | dim floats | localsPerSample * dim floats
 *
 * This mirrors the reader in the Python pipeline byte for byte.
 */

export const EMB_MAGIC = 'EMB1';
export const EMB_VERSION = 1;
export const HEADER_SIZE = 4 + 2 + 4 + 8 + 1 + 4;

export type Precision = 'f32' | 'f64';

export interface EmbRecord {
  label: number;
  vector: Float64Array;
  locals?: Float64Array[];
}

export class Emb1FormatError extends Error {}

function floatBytes(precision: Precision): number {
  return precision === 'f32' ? 4 : 8;
}

export function encodeEmb1(
  records: EmbRecord[],
  dim: number,
  precision: Precision,
  localsPerSample: number,
): Buffer {
  const fb = floatBytes(precision);
  const recordSize = 4 + fb * dim * (1 + localsPerSample);
  const buf = Buffer.alloc(HEADER_SIZE + recordSize * records.length);
  buf.write(EMB_MAGIC, 0, 'ascii');
  buf.writeUInt16LE(EMB_VERSION, 4);
  buf.writeUInt32LE(dim, 6);
  buf.writeBigUInt64LE(BigInt(records.length), 10);
  buf.writeUInt8(precision === 'f32' ? 0 : 1, 18);
  buf.writeUInt32LE(localsPerSample, 19);

  let off = HEADER_SIZE;
  const writeFloat = (value: number) => {
    if (precision === 'f32') {
      buf.writeFloatLE(Math.fround(value), off);
    } else {
      buf.writeDoubleLE(value, off);
    }
    off += fb;
  };
  for (const rec of records) {
    if (rec.vector.length !== dim) {
      throw new Emb1FormatError(`vector length ${rec.vector.length} != dim ${dim}`);
    }
    const locals = rec.locals ?? [];
    if (locals.length !== localsPerSample) {
      throw new Emb1FormatError(
        `sample has ${locals.length} locals, header declares ${localsPerSample}`,
      );
    }
    buf.writeInt32LE(rec.label, off);
    off += 4;
    for (const v of rec.vector) writeFloat(v);
    for (const local of locals) {
      if (local.length !== dim) {
        throw new Emb1FormatError(`local length ${local.length} != dim ${dim}`);
      }
      for (const v of local) writeFloat(v);
    }
  }
  return buf;
}

export interface Emb1File {
  dim: number;
  precision: Precision;
  localsPerSample: number;
  records: EmbRecord[];
}

/** Strict reader used by the exporter's own tests. */
export function decodeEmb1(buf: Buffer): Emb1File {
  if (buf.length < HEADER_SIZE) {
    throw new Emb1FormatError(`file ends at byte ${buf.length}, header needs ${HEADER_SIZE}`);
  }
  if (buf.toString('ascii', 0, 4) !== EMB_MAGIC) {
    throw new Emb1FormatError(`bad magic ${JSON.stringify(buf.toString('ascii', 0, 4))}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== EMB_VERSION) throw new Emb1FormatError(`unsupported version ${version}`);
  const dim = buf.readUInt32LE(6);
  const count = Number(buf.readBigUInt64LE(10));
  const precision: Precision = buf.readUInt8(18) === 0 ? 'f32' : 'f64';
  const localsPerSample = buf.readUInt32LE(19);
  const fb = floatBytes(precision);
  const recordSize = 4 + fb * dim * (1 + localsPerSample);
  if (buf.length !== HEADER_SIZE + recordSize * count) {
    throw new Emb1FormatError(
      `payload ends at byte ${buf.length}, header declares ${HEADER_SIZE + recordSize * count}`,
    );
  }
  let off = HEADER_SIZE;
  const readFloat = () => {
    const v = precision === 'f32' ? buf.readFloatLE(off) : buf.readDoubleLE(off);
    off += fb;
    return v;
  };
  const records: EmbRecord[] = [];
  for (let i = 0; i < count; i++) {
    const label = buf.readInt32LE(off);
    off += 4;
    const vector = new Float64Array(dim);
    for (let d = 0; d < dim; d++) vector[d] = readFloat();
    const locals: Float64Array[] = [];
    for (let l = 0; l < localsPerSample; l++) {
      const local = new Float64Array(dim);
      for (let d = 0; d < dim; d++) local[d] = readFloat();
      locals.push(local);
    }
    records.push(localsPerSample ? { label, vector, locals } : { label, vector });
  }
  return { dim, precision, localsPerSample, records };
}
