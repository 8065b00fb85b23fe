/**
 * PNG-tree datasets and the synthetic many-to-one toy task: three domains
 * share a texture process (smooth random fields plus elliptical blobs, the
 * structure SSIM latches onto) but map it through site-specific color ramps,
 * so the optimal translation is a structure-preserving recoloring.
 */

import * as fs from "fs";
import * as path from "path";
import { SplitMix64 } from "./rng";
import { RgbImage, readPng, toModelSpace, writePng } from "./png";
import { Tensor } from "./tensor";

export function listPngs(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((n) => n.toLowerCase().endsWith(".png"))
    .sort()
    .map((n) => path.join(dir, n));
}

export class Domain {
  images: Float64Array[] = [];
  side: number;

  constructor(dirs: string[]) {
    let side = 0;
    for (const dir of dirs) {
      for (const file of listPngs(dir)) {
        const img = readPng(file);
        if (img.width !== img.height) throw new Error(`${file}: expected square patches`);
        if (side === 0) side = img.width;
        if (img.width !== side) throw new Error(`${file}: mixed patch sizes`);
        this.images.push(toModelSpace(img));
      }
    }
    if (this.images.length === 0) throw new Error(`no PNG images under ${dirs.join(", ")}`);
    this.side = side;
  }

  batch(indices: number[]): Tensor {
    const n = this.side * this.side;
    const out = Tensor.zeros([indices.length, 3, this.side, this.side]);
    for (let i = 0; i < indices.length; i++) {
      out.data.set(this.images[indices[i]], i * 3 * n);
    }
    return out;
  }
}

interface ColorRamp {
  light: [number, number, number];
  dark: [number, number, number];
}

const RAMPS: Record<string, ColorRamp> = {
  x1: { light: [215, 220, 240], dark: [55, 70, 165] },   // blue-leaning site
  x2: { light: [228, 212, 232], dark: [120, 58, 142] },  // purple-leaning site
  y: { light: [246, 226, 236], dark: [204, 78, 138] },   // pink target domain
};

function textureField(side: number, rng: SplitMix64): Float64Array {
  const field = new Float64Array(side * side);
  const waves = 5;
  const fx = new Float64Array(waves);
  const fy = new Float64Array(waves);
  const ph = new Float64Array(waves);
  const amp = new Float64Array(waves);
  for (let k = 0; k < waves; k++) {
    fx[k] = rng.uniform(0.5, 4.0);
    fy[k] = rng.uniform(0.5, 4.0);
    ph[k] = rng.uniform(0, 2 * Math.PI);
    amp[k] = rng.uniform(0.4, 1.0);
  }
  for (let i = 0; i < side; i++) {
    for (let j = 0; j < side; j++) {
      let v = 0;
      for (let k = 0; k < waves; k++) {
        v += amp[k] * Math.sin((2 * Math.PI * (fx[k] * j + fy[k] * i)) / side + ph[k]);
      }
      field[i * side + j] = v;
    }
  }
  // Elliptical blobs give hard structure (cell-ish shapes).
  const blobs = 3 + rng.int(4);
  for (let b = 0; b < blobs; b++) {
    const cx = rng.uniform(0.1, 0.9) * side;
    const cy = rng.uniform(0.1, 0.9) * side;
    const rx = rng.uniform(0.04, 0.14) * side;
    const ry = rng.uniform(0.04, 0.14) * side;
    const boost = rng.uniform(1.5, 2.5);
    for (let i = 0; i < side; i++) {
      for (let j = 0; j < side; j++) {
        const dx = (j - cx) / rx;
        const dy = (i - cy) / ry;
        if (dx * dx + dy * dy < 1) field[i * side + j] += boost;
      }
    }
  }
  let lo = Infinity, hi = -Infinity;
  for (const v of field) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi - lo || 1;
  for (let i = 0; i < field.length; i++) field[i] = (field[i] - lo) / span;
  return field;
}

function renderDomainImage(side: number, ramp: ColorRamp, rng: SplitMix64): RgbImage {
  const field = textureField(side, rng);
  const data = new Uint8Array(side * side * 3);
  for (let p = 0; p < side * side; p++) {
    const t = field[p];
    for (let c = 0; c < 3; c++) {
      const v = ramp.light[c] + t * (ramp.dark[c] - ramp.light[c]) + rng.uniform(-3, 3);
      data[p * 3 + c] = Math.max(0, Math.min(255, Math.round(v)));
    }
  }
  return { width: side, height: side, data };
}

export function makeToyData(
  outDir: string, seed: number, trainPerDomain: number, holdoutPerDomain: number, side: number,
): void {
  const rng = new SplitMix64(seed);
  for (const domain of ["x1", "x2", "y"] as const) {
    const trainDir = path.join(outDir, domain);
    const holdDir = path.join(outDir, "holdout", domain);
    fs.mkdirSync(trainDir, { recursive: true });
    fs.mkdirSync(holdDir, { recursive: true });
    for (let k = 0; k < trainPerDomain; k++) {
      writePng(renderDomainImage(side, RAMPS[domain], rng), path.join(trainDir, `img_${String(k).padStart(3, "0")}.png`));
    }
    for (let k = 0; k < holdoutPerDomain; k++) {
      writePng(renderDomainImage(side, RAMPS[domain], rng), path.join(holdDir, `img_${String(k).padStart(3, "0")}.png`));
    }
  }
}
