/**
 * Test fixtures: deterministic random data, raw sidecar volume writing
 * (the primary's documented container format), and CLI invocation.
 */

import { spawnSync } from "node:child_process";
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export const CLI = process.env.WINDOWSHIFT_CMD ?? "windowshift";

/** mulberry32: tiny deterministic generator for building test data. */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const SIDECAR_VERSION = 1;

export function writeSidecar(
  path: string,
  dims: [number, number, number],
  payload: Float32Array | Uint8Array,
): void {
  const [nx, ny, nz] = dims;
  if (payload.length !== nx * ny * nz) {
    throw new Error("payload does not match dims");
  }
  const header = Buffer.alloc(64);
  header.write("HUVOLUME", 0, "latin1");
  header.writeUInt32LE(SIDECAR_VERSION, 8);
  header.writeUInt32LE(nx, 12);
  header.writeUInt32LE(ny, 16);
  header.writeUInt32LE(nz, 20);
  header.writeDoubleLE(1.0, 24);
  header.writeDoubleLE(1.0, 32);
  header.writeDoubleLE(1.0, 40);
  header.writeUInt32LE(payload instanceof Float32Array ? 0 : 1, 48);
  const body = Buffer.from(payload.buffer, payload.byteOffset, payload.byteLength);
  writeFileSync(path, Buffer.concat([header, body]));
}

export interface TestVolume {
  sourceId: string;
  dims: [number, number, number];
  voxels: Float32Array;
  labels: Uint8Array;
}

/**
 * A volume whose every axial slice contains liver (label 1) and tumor
 * (label 2) voxels, so the CLI's liver-slice selection keeps all of them.
 */
export function makeVolume(sourceId: string, dims: [number, number, number], rng: () => number): TestVolume {
  const [nx, ny, nz] = dims;
  const voxels = new Float32Array(nx * ny * nz);
  for (let i = 0; i < voxels.length; i++) {
    voxels[i] = Math.fround(-200 + 500 * rng());
  }
  const labels = new Uint8Array(nx * ny * nz);
  const at = (x: number, y: number, z: number) => (x * ny + y) * nz + z;
  for (let z = 0; z < nz; z++) {
    for (let x = 2; x < nx - 2; x++) {
      for (let y = 2; y < ny - 2; y++) {
        labels[at(x, y, z)] = 1;
      }
    }
    const cx = Math.floor(nx / 2);
    const cy = Math.floor(ny / 2);
    labels[at(cx, cy, z)] = 2;
    labels[at(cx + 1, cy, z)] = 2;
  }
  return { sourceId, dims, voxels, labels };
}

export function axialSlice(volume: TestVolume, z: number): { pixels: Float32Array; mask: Uint8Array } {
  const [nx, ny, nz] = volume.dims;
  const pixels = new Float32Array(nx * ny);
  const mask = new Uint8Array(nx * ny);
  for (let x = 0; x < nx; x++) {
    for (let y = 0; y < ny; y++) {
      pixels[x * ny + y] = volume.voxels[(x * ny + y) * nz + z];
      mask[x * ny + y] = volume.labels[(x * ny + y) * nz + z];
    }
  }
  return { pixels, mask };
}

export function writeCohort(root: string, volumes: TestVolume[]): { images: string; masks: string } {
  const images = join(root, "images");
  const masks = join(root, "masks");
  mkdirSync(images, { recursive: true });
  mkdirSync(masks, { recursive: true });
  for (const volume of volumes) {
    writeSidecar(join(images, `${volume.sourceId}.hvol`), volume.dims, volume.voxels);
    writeSidecar(join(masks, `${volume.sourceId}.hvol`), volume.dims, volume.labels);
  }
  return { images, masks };
}

export function runCli(args: string[]): void {
  const result = spawnSync(CLI, args, { encoding: "utf-8" });
  if (result.error) {
    throw result.error;
  }
  if (result.status !== 0) {
    throw new Error(`${CLI} ${args.join(" ")} exited ${result.status}:\n${result.stderr}`);
  }
}
