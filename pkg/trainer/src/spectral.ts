/**
 * Spectral normalization by weight projection: after every optimizer step,
 * each constrained kernel (conv weights and attention projections, flattened
 * to (dim0, rest)) is divided by its power-iteration top singular value, so
 * the spectral norm stays at 1 throughout training.  Export uses a long,
 * fixed-seed estimate with a small safety margin so the inference engine's
 * load-time bound (<= 1 + 1e-3) always holds.
 */

import { splitmixUnitVector } from "./rng";
import { Tensor } from "./tensor";
import { ParamStore } from "./networks";

export function isSpectralConstrained(name: string): boolean {
  if (name.endsWith(".conv.w")) return true;
  const leaf = name.split(".").pop()!;
  return leaf === "wq" || leaf === "wk" || leaf === "wv";
}

function matVec(m: Float64Array, rows: number, cols: number, v: Float64Array, out: Float64Array): void {
  for (let i = 0; i < rows; i++) {
    let acc = 0;
    const row = i * cols;
    for (let j = 0; j < cols; j++) acc += m[row + j] * v[j];
    out[i] = acc;
  }
}

function matTVec(m: Float64Array, rows: number, cols: number, u: Float64Array, out: Float64Array): void {
  out.fill(0);
  for (let i = 0; i < rows; i++) {
    const row = i * cols;
    const uv = u[i];
    for (let j = 0; j < cols; j++) out[j] += m[row + j] * uv;
  }
}

function normalize(v: Float64Array): number {
  let acc = 0;
  for (let i = 0; i < v.length; i++) acc += v[i] * v[i];
  const n = Math.sqrt(acc);
  if (n > 0) for (let i = 0; i < v.length; i++) v[i] /= n;
  return n;
}

/** Power-iteration sigma_max of a kernel flattened to (shape[0], rest). */
export function spectralNormEstimate(t: Tensor, iters = 10, v0?: Float64Array): number {
  const rows = t.shape[0];
  const cols = t.size / rows;
  const v = v0 ? v0.slice() : splitmixUnitVector(cols);
  const u = new Float64Array(rows);
  for (let k = 0; k < iters; k++) {
    matVec(t.data, rows, cols, v, u);
    if (normalize(u) === 0) return 0;
    matTVec(t.data, rows, cols, u, v);
    if (normalize(v) === 0) return 0;
  }
  const tmp = new Float64Array(rows);
  matVec(t.data, rows, cols, v, tmp);
  let sigma = 0;
  for (let i = 0; i < rows; i++) sigma += u[i] * tmp[i];
  return sigma;
}

export class SpectralProjector {
  /** Persistent per-kernel right vectors for warm-started power iteration. */
  private vectors = new Map<Tensor, Float64Array>();
  private kernels: Array<{ name: string; t: Tensor }> = [];

  constructor(store: ParamStore, prefix: string) {
    for (const [name, t] of store.params) {
      if (name.startsWith(prefix) && isSpectralConstrained(name)) {
        this.kernels.push({ name, t });
        this.vectors.set(t, splitmixUnitVector(t.size / t.shape[0]));
      }
    }
  }

  /** Divide every constrained kernel in place by its current sigma estimate. */
  project(iters = 3): void {
    for (const { t } of this.kernels) {
      const v = this.vectors.get(t)!;
      const sigma = spectralNormEstimate(t, iters, v);
      // Warm-start the next step with the refined vector.
      refreshVector(t, v);
      if (sigma > 0) {
        for (let i = 0; i < t.size; i++) t.data[i] /= sigma;
      }
    }
  }
}

function refreshVector(t: Tensor, v: Float64Array): void {
  const rows = t.shape[0];
  const cols = t.size / rows;
  const u = new Float64Array(rows);
  matVec(t.data, rows, cols, v, u);
  if (normalize(u) === 0) return;
  matTVec(t.data, rows, cols, u, v);
  normalize(v);
}

/** Export-time hard normalization with the fixed-seed start vector. */
export function exportNormalize(data: Float64Array, dim0: number): void {
  const t = new Tensor(data, [dim0, data.length / dim0]);
  const sigma = spectralNormEstimate(t, 100);
  if (sigma > 0) {
    const s = sigma * (1 + 1e-6);
    for (let i = 0; i < data.length; i++) data[i] /= s;
  }
}
