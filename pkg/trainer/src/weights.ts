/**
 * The shared binary tensor-archive format (bit-compatible with the inference
 * engine): magic "SAAS", u32 version 1, u32 count, then per tensor
 * (u32 name length, UTF-8 name, u32 rank, u32 dims, f32 LE payload),
 * tensors sorted by name.  Architecture metadata rides as meta/* scalars.
 */

import * as fs from "fs";
import { Arch } from "./networks";

export const MAGIC = "SAAS";
export const VERSION = 1;

export interface NamedTensor {
  shape: number[];
  data: Float64Array;
}

export type TensorMap = Map<string, NamedTensor>;

const NORM_KINDS = ["batch", "instance", "none"];

export function metaTensors(arch: Arch, hasDisc: boolean): TensorMap {
  const m: TensorMap = new Map();
  const scalar = (name: string, v: number) =>
    m.set(`meta/${name}`, { shape: [1], data: Float64Array.of(v) });
  scalar("depth", arch.depth);
  scalar("base_channels", arch.baseChannels);
  scalar("channel_cap", arch.channelCap);
  scalar("attention_min_res", arch.attentionMinRes);
  scalar("norm_kind", NORM_KINDS.indexOf("batch"));
  scalar("in_channels", arch.inChannels);
  scalar("disc_base_channels", arch.discBaseChannels);
  scalar("has_disc", hasDisc ? 1 : 0);
  return m;
}

export function archFromMeta(tensors: TensorMap): Arch {
  const get = (name: string): number => {
    const t = tensors.get(`meta/${name}`);
    if (!t) throw new Error(`archive missing meta/${name}`);
    return t.data[0];
  };
  return {
    depth: get("depth"),
    baseChannels: get("base_channels"),
    channelCap: get("channel_cap"),
    attentionMinRes: get("attention_min_res"),
    discBaseChannels: get("disc_base_channels"),
    inChannels: get("in_channels"),
  };
}

export function writeArchive(tensors: TensorMap, path: string): void {
  const names = Array.from(tensors.keys()).sort();
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(12);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(names.length, 8);
  chunks.push(header);
  for (const name of names) {
    const { shape, data } = tensors.get(name)!;
    const nameBytes = Buffer.from(name, "utf-8");
    const head = Buffer.alloc(4 + nameBytes.length + 4 + 4 * shape.length);
    let off = 0;
    head.writeUInt32LE(nameBytes.length, off); off += 4;
    nameBytes.copy(head, off); off += nameBytes.length;
    head.writeUInt32LE(shape.length, off); off += 4;
    for (const d of shape) { head.writeUInt32LE(d, off); off += 4; }
    chunks.push(head);
    const payload = Buffer.alloc(4 * data.length);
    for (let i = 0; i < data.length; i++) payload.writeFloatLE(Math.fround(data[i]), i * 4);
    chunks.push(payload);
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function readArchive(path: string): TensorMap {
  const buf = fs.readFileSync(path);
  let off = 0;
  const need = (n: number) => {
    if (off + n > buf.length) throw new Error(`${path}: truncated archive`);
  };
  need(12);
  if (buf.toString("ascii", 0, 4) !== MAGIC) throw new Error(`${path}: bad magic`);
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const count = buf.readUInt32LE(8);
  off = 12;
  const out: TensorMap = new Map();
  for (let t = 0; t < count; t++) {
    need(4);
    const nameLen = buf.readUInt32LE(off); off += 4;
    need(nameLen);
    const name = buf.toString("utf-8", off, off + nameLen); off += nameLen;
    need(4);
    const rank = buf.readUInt32LE(off); off += 4;
    const shape: number[] = [];
    need(4 * rank);
    for (let d = 0; d < rank; d++) { shape.push(buf.readUInt32LE(off)); off += 4; }
    const size = shape.reduce((a, b) => a * b, 1);
    need(4 * size);
    const data = new Float64Array(size);
    for (let i = 0; i < size; i++) data[i] = buf.readFloatLE(off + i * 4);
    off += 4 * size;
    if (out.has(name)) throw new Error(`${path}: duplicate tensor ${name}`);
    out.set(name, { shape, data });
  }
  if (off !== buf.length) throw new Error(`${path}: trailing bytes`);
  return out;
}
