import { crc32 } from "node:zlib";
import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { basename } from "node:path";

// Binary contract with the geometry side: little-endian, magic "FMAP",
// u32 version=1, u32 view_id, u32 rotation_deg, u32 P, u32 d, then
// P*P*d f32 row-major (patch row, patch col, channel), trailing CRC32
// of the payload.
const FMAP_MAGIC = "FMAP";
const FMAP_VERSION = 1;
const HEADER_BYTES = 24;

export interface FeatureMap {
  viewId: number;
  rotationDeg: number;
  patches: number; // P
  dim: number; // d
  grid: Float32Array; // length P*P*d
}

export class FmapFormatError extends Error {}
export class FmapChecksumError extends FmapFormatError {}

export function fmapFilename(viewId: number, rotationDeg: number): string {
  const pad = (n: number) => String(n).padStart(3, "0");
  return `view_${pad(viewId)}_rot${pad(rotationDeg)}.fmap`;
}

/** Parse (view_id, rotation_deg) from a render filename like view_007_rot090.png. */
export function parseRenderFilename(path: string): { viewId: number; rotationDeg: number } {
  const m = /^view_(\d{3})_rot(\d{3})\.png$/.exec(basename(path));
  if (!m) {
    throw new FmapFormatError(
      `${path}: does not follow the render naming convention view_NNN_rotDDD.png`
    );
  }
  return { viewId: parseInt(m[1], 10), rotationDeg: parseInt(m[2], 10) };
}

export function encodeFeatureMap(fmap: FeatureMap): Buffer {
  const { patches: P, dim: d } = fmap;
  if (fmap.grid.length !== P * P * d) {
    throw new FmapFormatError(`grid length ${fmap.grid.length} != P*P*d = ${P * P * d}`);
  }
  const payload = Buffer.alloc(fmap.grid.length * 4);
  for (let i = 0; i < fmap.grid.length; i++) payload.writeFloatLE(fmap.grid[i], i * 4);
  const header = Buffer.alloc(HEADER_BYTES);
  header.write(FMAP_MAGIC, 0, "ascii");
  header.writeUInt32LE(FMAP_VERSION, 4);
  header.writeUInt32LE(fmap.viewId, 8);
  header.writeUInt32LE(fmap.rotationDeg, 12);
  header.writeUInt32LE(P, 16);
  header.writeUInt32LE(d, 20);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(payload) >>> 0, 0);
  return Buffer.concat([header, payload, tail]);
}

/** Atomic write: temp file in the target directory, then rename. */
export function saveFeatureMap(fmap: FeatureMap, path: string): void {
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, encodeFeatureMap(fmap));
  renameSync(tmp, path);
}

export function decodeFeatureMap(data: Buffer, label = "buffer"): FeatureMap {
  if (data.length < HEADER_BYTES + 4 || data.toString("ascii", 0, 4) !== FMAP_MAGIC) {
    throw new FmapFormatError(`${label}: not an FMAP file`);
  }
  const version = data.readUInt32LE(4);
  if (version !== FMAP_VERSION) {
    throw new FmapFormatError(`${label}: unsupported FMAP version ${version}`);
  }
  const viewId = data.readUInt32LE(8);
  const rotationDeg = data.readUInt32LE(12);
  const P = data.readUInt32LE(16);
  const d = data.readUInt32LE(20);
  const nBytes = P * P * d * 4;
  if (data.length !== HEADER_BYTES + nBytes + 4) {
    throw new FmapFormatError(`${label}: payload size mismatch`);
  }
  const payload = data.subarray(HEADER_BYTES, HEADER_BYTES + nBytes);
  const stored = data.readUInt32LE(HEADER_BYTES + nBytes);
  if ((crc32(payload) >>> 0) !== stored) {
    throw new FmapChecksumError(`${label}: CRC32 mismatch`);
  }
  const grid = new Float32Array(P * P * d);
  for (let i = 0; i < grid.length; i++) grid[i] = payload.readFloatLE(i * 4);
  return { viewId, rotationDeg, patches: P, dim: d, grid };
}

export function loadFeatureMap(path: string): FeatureMap {
  return decodeFeatureMap(readFileSync(path), path);
}
