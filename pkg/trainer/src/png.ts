/** 8-bit RGB PNG read/write on top of pngjs. */

import * as fs from "fs";
import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  data: Uint8Array; // row-major RGB triples
}

export function readPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path));
  const out = new Uint8Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    out[i * 3] = png.data[i * 4];
    out[i * 3 + 1] = png.data[i * 4 + 1];
    out[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { width: png.width, height: png.height, data: out };
}

export function writePng(img: RgbImage, path: string): void {
  const png = new PNG({ width: img.width, height: img.height });
  for (let i = 0; i < img.width * img.height; i++) {
    png.data[i * 4] = img.data[i * 3];
    png.data[i * 4 + 1] = img.data[i * 3 + 1];
    png.data[i * 4 + 2] = img.data[i * 3 + 2];
    png.data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(path, PNG.sync.write(png));
}

/** uint8 image -> model-space floats (3, H, W) in [-1, 1]. */
export function toModelSpace(img: RgbImage): Float64Array {
  const n = img.width * img.height;
  const out = new Float64Array(3 * n);
  for (let p = 0; p < n; p++) {
    for (let c = 0; c < 3; c++) {
      out[c * n + p] = img.data[p * 3 + c] / 127.5 - 1.0;
    }
  }
  return out;
}

/** Model-space floats (3, H, W) -> uint8 image, rounding half away from zero. */
export function fromModelSpace(data: Float64Array, width: number, height: number): RgbImage {
  const n = width * height;
  const out = new Uint8Array(n * 3);
  for (let p = 0; p < n; p++) {
    for (let c = 0; c < 3; c++) {
      const v = (data[c * n + p] + 1.0) * 127.5;
      out[p * 3 + c] = Math.max(0, Math.min(255, Math.floor(v + 0.5)));
    }
  }
  return { width, height, data: out };
}
