import { describe, expect, it } from 'vitest';

import { Emb1FormatError, decodeEmb1, encodeEmb1 } from '../src/emb1.js';

function randomRecords(n: number, dim: number, locals: number) {
  return Array.from({ length: n }, (_, i) => ({
    label: i % 3 === 0 ? -1 : i,
    vector: Float64Array.from({ length: dim }, (_, d) => Math.sin(i * 17 + d)),
    ...(locals
      ? {
          locals: Array.from({ length: locals }, (_, l) =>
            Float64Array.from({ length: dim }, (_, d) => Math.cos(i + l + d)),
          ),
        }
      : {}),
  }));
}

describe('EMB1 encoding', () => {
  it('round-trips f64 exactly', () => {
    const records = randomRecords(7, 5, 0);
    const buf = encodeEmb1(records, 5, 'f64', 0);
    const back = decodeEmb1(buf);
    expect(back.dim).toBe(5);
    expect(back.precision).toBe('f64');
    expect(back.records).toHaveLength(7);
    back.records.forEach((rec, i) => {
      expect(rec.label).toBe(records[i].label);
      expect(Array.from(rec.vector)).toEqual(Array.from(records[i].vector));
    });
  });

  it('round-trips f32 within float precision', () => {
    const records = randomRecords(4, 6, 2);
    const buf = encodeEmb1(records, 6, 'f32', 2);
    const back = decodeEmb1(buf);
    expect(back.localsPerSample).toBe(2);
    back.records.forEach((rec, i) => {
      rec.vector.forEach((v, d) => {
        expect(v).toBeCloseTo(records[i].vector[d], 6);
        expect(v).toBe(Math.fround(records[i].vector[d]));
      });
    });
  });

  it('re-encoding a decoded file is byte-identical', () => {
    const records = randomRecords(5, 4, 1);
    const buf = encodeEmb1(records, 4, 'f32', 1);
    const back = decodeEmb1(buf);
    const again = encodeEmb1(back.records, back.dim, back.precision, back.localsPerSample);
    expect(again.equals(buf)).toBe(true);
  });

  it('rejects bad magic and truncation', () => {
    const buf = encodeEmb1(randomRecords(2, 3, 0), 3, 'f64', 0);
    const bad = Buffer.from(buf);
    bad.write('XXXX', 0, 'ascii');
    expect(() => decodeEmb1(bad)).toThrow(Emb1FormatError);
    expect(() => decodeEmb1(buf.subarray(0, buf.length - 3))).toThrow(Emb1FormatError);
    expect(() => decodeEmb1(buf.subarray(0, 10))).toThrow(Emb1FormatError);
  });

  it('rejects inconsistent record shapes', () => {
    const records = randomRecords(2, 3, 0);
    expect(() => encodeEmb1(records, 4, 'f64', 0)).toThrow(Emb1FormatError);
    expect(() => encodeEmb1(records, 3, 'f64', 2)).toThrow(Emb1FormatError);
  });
});
