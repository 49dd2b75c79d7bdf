/**
 * NPY 1.0 reading/writing for the dtypes the pipeline exchanges:
 * little-endian float32 images and uint8 label masks, C order.
 */

import { readFileSync, writeFileSync } from "node:fs";

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export type NpyData = Float32Array | Uint8Array;

export interface NpyArray {
  data: NpyData;
  shape: number[];
}

function descrOf(data: NpyData): string {
  return data instanceof Float32Array ? "<f4" : "|u1";
}

export function encodeNpy(array: NpyArray): Buffer {
  const { data, shape } = array;
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`shape [${shape}] does not match data length ${data.length}`);
  }
  const shapeText = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${descrOf(data)}', 'fortran_order': False, 'shape': ${shapeText}, }`;
  const unpadded = MAGIC.length + 2 + 2 + header.length + 1;
  header = header + " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const head = Buffer.alloc(MAGIC.length + 4 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1; // version 1.0
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, "latin1");
  return Buffer.concat([head, Buffer.from(data.buffer, data.byteOffset, data.byteLength)]);
}

export function writeNpy(path: string, array: NpyArray): void {
  writeFileSync(path, encodeNpy(array));
}

export function decodeNpy(raw: Buffer): NpyArray {
  if (!raw.subarray(0, 6).equals(MAGIC)) {
    throw new Error("not an NPY file (bad magic)");
  }
  const major = raw[6];
  const headerLength = major === 1 ? raw.readUInt16LE(8) : raw.readUInt32LE(8);
  const headerEnd = major === 1 ? 10 + headerLength : 12 + headerLength;
  const header = raw.subarray(major === 1 ? 10 : 12, headerEnd).toString("latin1");

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shapeText === undefined) {
    throw new Error(`unparseable NPY header: ${header}`);
  }
  if (fortran !== "False") {
    throw new Error("fortran-order NPY is not supported");
  }
  const shape = shapeText
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => Number.parseInt(s, 10));
  const count = shape.reduce((a, b) => a * b, 1);

  const payload = raw.subarray(headerEnd);
  // Copy into a fresh ArrayBuffer so the typed-array view is aligned.
  const copy = (byteLength: number): ArrayBuffer => {
    const out = new ArrayBuffer(byteLength);
    new Uint8Array(out).set(payload.subarray(0, byteLength));
    return out;
  };
  if (descr === "<f4") {
    return { data: new Float32Array(copy(count * 4)), shape };
  }
  if (descr === "|u1" || descr === "<u1") {
    return { data: new Uint8Array(copy(count)), shape };
  }
  throw new Error(`unsupported NPY dtype ${descr}`);
}

export function readNpy(path: string): NpyArray {
  return decodeNpy(readFileSync(path));
}
