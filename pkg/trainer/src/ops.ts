/**
 * Differentiable operations over (B, C, H, W) and 2-D tensors.
 *
 * Layout conventions mirror the inference engine: conv kernels are
 * (out, in, kh, kw); transposed-conv kernels (in, out, kh, kw) with the
 * dilate + flipped-kernel equivalence; batch norm uses eps 1e-5, leaky slope
 * 0.2, and running stats are an EMA (momentum 0.1) of batch mean / biased
 * variance.
 */

import { Tensor, record, recording } from "./tensor";

export const BN_EPS = 1e-5;
export const LEAKY_SLOPE = 0.2;

function prod(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function add(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("add: size mismatch");
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + b.data[i];
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] += g[i];
    }
  });
  return out;
}

export function sub(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("sub: size mismatch");
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] - b.data[i];
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] -= g[i];
    }
  });
  return out;
}

export function mul(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("mul: size mismatch");
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] * b.data[i];
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * b.data[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] += g[i] * a.data[i];
    }
  });
  return out;
}

export function div(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("div: size mismatch");
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] / b.data[i];
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] / b.data[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] -= (g[i] * a.data[i]) / (b.data[i] * b.data[i]);
    }
  });
  return out;
}

export function scale(a: Tensor, s: number): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] * s;
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * s;
    }
  });
  return out;
}

export function addConst(a: Tensor, c: number): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + c;
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
  });
  return out;
}

/** Multiply by a scalar tensor (e.g. the attention residual scale mu). */
export function scaleByParam(a: Tensor, s: Tensor): Tensor {
  if (s.size !== 1) throw new Error("scaleByParam expects a scalar tensor");
  const sv = s.data[0];
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] * sv;
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * sv;
    }
    if (s.requiresGrad) {
      const gs = s.ensureGrad();
      let acc = 0;
      for (let i = 0; i < g.length; i++) acc += g[i] * a.data[i];
      gs[0] += acc;
    }
  });
  return out;
}

export function relu(a: Tensor): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] > 0 ? a.data[i] : 0;
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) if (a.data[i] > 0) ga[i] += g[i];
    }
  });
  return out;
}

export function leakyRelu(a: Tensor, slope = LEAKY_SLOPE): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] >= 0 ? a.data[i] : slope * a.data[i];
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += a.data[i] >= 0 ? g[i] : slope * g[i];
    }
  });
  return out;
}

export function tanh(a: Tensor): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = Math.tanh(a.data[i]);
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * (1 - out.data[i] * out.data[i]);
    }
  });
  return out;
}

export function meanAll(a: Tensor): Tensor {
  let acc = 0;
  for (let i = 0; i < a.size; i++) acc += a.data[i];
  const out = Tensor.scalar(acc / a.size);
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad![0] / a.size;
      const ga = a.ensureGrad();
      for (let i = 0; i < a.size; i++) ga[i] += g;
    }
  });
  return out;
}

/** mean(|a - b|); subgradient 0 at exact ties. */
export function l1Mean(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("l1Mean: size mismatch");
  let acc = 0;
  for (let i = 0; i < a.size; i++) acc += Math.abs(a.data[i] - b.data[i]);
  const out = Tensor.scalar(acc / a.size);
  record(out, () => {
    const g = out.grad![0] / a.size;
    const ga = a.requiresGrad ? a.ensureGrad() : null;
    const gb = b.requiresGrad ? b.ensureGrad() : null;
    for (let i = 0; i < a.size; i++) {
      const d = a.data[i] - b.data[i];
      const s = d > 0 ? 1 : d < 0 ? -1 : 0;
      if (ga) ga[i] += g * s;
      if (gb) gb[i] -= g * s;
    }
  });
  return out;
}

export function addScalars(terms: Array<{ t: Tensor; w: number }>): Tensor {
  let acc = 0;
  for (const { t, w } of terms) {
    if (t.size !== 1) throw new Error("addScalars expects scalar tensors");
    acc += w * t.data[0];
  }
  const out = Tensor.scalar(acc);
  record(out, () => {
    const g = out.grad![0];
    for (const { t, w } of terms) {
      if (t.requiresGrad) t.ensureGrad()[0] += g * w;
    }
  });
  return out;
}

/** Matrix product a (m,k) @ b (k,n) with saxpy inner loops. */
export function matmul(a: Tensor, b: Tensor): Tensor {
  const [m, k] = a.shape;
  const [k2, n] = b.shape;
  if (a.shape.length !== 2 || b.shape.length !== 2 || k !== k2) {
    throw new Error(`matmul: bad shapes ${a.shape} x ${b.shape}`);
  }
  const out = Tensor.zeros([m, n]);
  const ad = a.data, bd = b.data, od = out.data;
  for (let i = 0; i < m; i++) {
    const arow = i * k;
    const orow = i * n;
    for (let p = 0; p < k; p++) {
      const av = ad[arow + p];
      if (av === 0) continue;
      const brow = p * n;
      for (let j = 0; j < n; j++) od[orow + j] += av * bd[brow + j];
    }
  }
  record(out, () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      // ga += g @ b^T
      for (let i = 0; i < m; i++) {
        for (let p = 0; p < k; p++) {
          let acc = 0;
          const brow = p * n, grow = i * n;
          for (let j = 0; j < n; j++) acc += g[grow + j] * bd[brow + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      // gb += a^T @ g
      for (let p = 0; p < k; p++) {
        for (let i = 0; i < m; i++) {
          const av = ad[i * k + p];
          if (av === 0) continue;
          const grow = i * n, brow = p * n;
          for (let j = 0; j < n; j++) gb[brow + j] += av * g[grow + j];
        }
      }
    }
  });
  return out;
}

export function transpose2d(a: Tensor): Tensor {
  const [m, n] = a.shape;
  const out = Tensor.zeros([n, m]);
  for (let i = 0; i < m; i++)
    for (let j = 0; j < n; j++) out.data[j * m + i] = a.data[i * n + j];
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < m; i++)
        for (let j = 0; j < n; j++) ga[i * n + j] += g[j * m + i];
    }
  });
  return out;
}

/** Row-wise softmax of a (m, n) tensor. */
export function softmaxRows(a: Tensor): Tensor {
  const [m, n] = a.shape;
  const out = Tensor.zeros([m, n]);
  for (let i = 0; i < m; i++) {
    const row = i * n;
    let max = -Infinity;
    for (let j = 0; j < n; j++) if (a.data[row + j] > max) max = a.data[row + j];
    let z = 0;
    for (let j = 0; j < n; j++) {
      const e = Math.exp(a.data[row + j] - max);
      out.data[row + j] = e;
      z += e;
    }
    for (let j = 0; j < n; j++) out.data[row + j] /= z;
  }
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < m; i++) {
        const row = i * n;
        let dot = 0;
        for (let j = 0; j < n; j++) dot += g[row + j] * out.data[row + j];
        for (let j = 0; j < n; j++) {
          ga[row + j] += out.data[row + j] * (g[row + j] - dot);
        }
      }
    }
  });
  return out;
}

function convOutSize(size: number, k: number, stride: number, pad: number): number {
  return Math.floor((size + 2 * pad - k) / stride) + 1;
}

function im2col(
  x: Float64Array, c: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number,
  ho: number, wo: number,
): Float64Array {
  const cols = new Float64Array(c * kh * kw * ho * wo);
  const planeIn = h * w;
  const planeOut = ho * wo;
  for (let ci = 0; ci < c; ci++) {
    for (let ki = 0; ki < kh; ki++) {
      for (let kj = 0; kj < kw; kj++) {
        const colRow = ((ci * kh + ki) * kw + kj) * planeOut;
        for (let oi = 0; oi < ho; oi++) {
          const ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          const inRow = ci * planeIn + ii * w;
          const outRow = colRow + oi * wo;
          for (let oj = 0; oj < wo; oj++) {
            const jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            cols[outRow + oj] = x[inRow + jj];
          }
        }
      }
    }
  }
  return cols;
}

function col2im(
  cols: Float64Array, c: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number,
  ho: number, wo: number, out: Float64Array,
): void {
  const planeIn = h * w;
  const planeOut = ho * wo;
  for (let ci = 0; ci < c; ci++) {
    for (let ki = 0; ki < kh; ki++) {
      for (let kj = 0; kj < kw; kj++) {
        const colRow = ((ci * kh + ki) * kw + kj) * planeOut;
        for (let oi = 0; oi < ho; oi++) {
          const ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          const inRow = ci * planeIn + ii * w;
          const outRow = colRow + oi * wo;
          for (let oj = 0; oj < wo; oj++) {
            const jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            out[inRow + jj] += cols[outRow + oj];
          }
        }
      }
    }
  }
}

/** Batched conv: x (B, Ci, H, W), w (Co, Ci, kh, kw) -> (B, Co, Ho, Wo). */
export function conv2d(x: Tensor, w: Tensor, stride: number, pad: number): Tensor {
  const [b, ci, h, wd] = x.shape;
  const [co, ci2, kh, kw] = w.shape;
  if (ci !== ci2) throw new Error(`conv2d: ${ci} input channels vs kernel ${ci2}`);
  const ho = convOutSize(h, kh, stride, pad);
  const wo = convOutSize(wd, kw, stride, pad);
  const out = Tensor.zeros([b, co, ho, wo]);
  const k = ci * kh * kw;
  const n = ho * wo;
  const colsPerImage: Float64Array[] = [];
  for (let bi = 0; bi < b; bi++) {
    const xi = x.data.subarray(bi * ci * h * wd, (bi + 1) * ci * h * wd) as Float64Array;
    const cols = im2col(xi, ci, h, wd, kh, kw, stride, pad, ho, wo);
    if (recording()) colsPerImage.push(cols);
    const od = out.data;
    const base = bi * co * n;
    for (let o = 0; o < co; o++) {
      const wrow = o * k;
      const orow = base + o * n;
      for (let p = 0; p < k; p++) {
        const wv = w.data[wrow + p];
        if (wv === 0) continue;
        const crow = p * n;
        for (let j = 0; j < n; j++) od[orow + j] += wv * cols[crow + j];
      }
    }
  }
  record(out, () => {
    const g = out.grad!;
    const gw = w.requiresGrad ? w.ensureGrad() : null;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    for (let bi = 0; bi < b; bi++) {
      const cols = colsPerImage[bi];
      const base = bi * co * n;
      if (gw) {
        // gw += g_b @ cols_b^T
        for (let o = 0; o < co; o++) {
          const grow = base + o * n;
          const wrow = o * k;
          for (let p = 0; p < k; p++) {
            let acc = 0;
            const crow = p * n;
            for (let j = 0; j < n; j++) acc += g[grow + j] * cols[crow + j];
            gw[wrow + p] += acc;
          }
        }
      }
      if (gx) {
        const colsGrad = new Float64Array(k * n);
        for (let o = 0; o < co; o++) {
          const grow = base + o * n;
          const wrow = o * k;
          for (let p = 0; p < k; p++) {
            const wv = w.data[wrow + p];
            if (wv === 0) continue;
            const crow = p * n;
            for (let j = 0; j < n; j++) colsGrad[crow + j] += wv * g[grow + j];
          }
        }
        const gxi = gx.subarray(bi * ci * h * wd, (bi + 1) * ci * h * wd) as Float64Array;
        col2im(colsGrad, ci, h, wd, kh, kw, stride, pad, ho, wo, gxi);
      }
    }
  });
  return out;
}

/**
 * Transposed conv: x (B, Ci, H, W), w (Ci, Co, kh, kw) -> (B, Co, H*stride, ...).
 * Output size (H-1)*stride - 2*pad + kh, the inverse geometry of conv2d.
 */
export function convTranspose2d(x: Tensor, w: Tensor, stride: number, pad: number): Tensor {
  const [b, ci, h, wd] = x.shape;
  const [ci2, co, kh, kw] = w.shape;
  if (ci !== ci2) throw new Error(`convT2d: ${ci} input channels vs kernel ${ci2}`);
  const ho = (h - 1) * stride - 2 * pad + kh;
  const wo = (wd - 1) * stride - 2 * pad + kw;
  const out = Tensor.zeros([b, co, ho, wo]);
  // Forward = col2im of w^T @ x (the adjoint of conv2d with kernel w').
  const k = co * kh * kw;
  const n = h * wd;
  for (let bi = 0; bi < b; bi++) {
    const cols = new Float64Array(k * n);
    // cols = w_reshaped^T @ x_b, where w_reshaped is (ci, co*kh*kw)
    for (let c0 = 0; c0 < ci; c0++) {
      const xrow = bi * ci * n + c0 * n;
      const wrow = c0 * k;
      for (let p = 0; p < k; p++) {
        const wv = w.data[wrow + p];
        if (wv === 0) continue;
        const crow = p * n;
        for (let j = 0; j < n; j++) cols[crow + j] += wv * x.data[xrow + j];
      }
    }
    const oi = out.data.subarray(bi * co * ho * wo, (bi + 1) * co * ho * wo) as Float64Array;
    col2im(cols, co, ho, wo, kh, kw, stride, pad, h, wd, oi);
  }
  record(out, () => {
    const g = out.grad!;
    const gw = w.requiresGrad ? w.ensureGrad() : null;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    for (let bi = 0; bi < b; bi++) {
      const gi = g.subarray(bi * co * ho * wo, (bi + 1) * co * ho * wo) as Float64Array;
      const gcols = im2col(gi, co, ho, wo, kh, kw, stride, pad, h, wd);
      if (gx) {
        // gx_b += w_reshaped @ gcols
        for (let c0 = 0; c0 < ci; c0++) {
          const xrow = bi * ci * n + c0 * n;
          const wrow = c0 * k;
          for (let p = 0; p < k; p++) {
            const wv = w.data[wrow + p];
            if (wv === 0) continue;
            const crow = p * n;
            for (let j = 0; j < n; j++) gx[xrow + j] += wv * gcols[crow + j];
          }
        }
      }
      if (gw) {
        // gw += x_b @ gcols^T
        for (let c0 = 0; c0 < ci; c0++) {
          const xrow = bi * ci * n + c0 * n;
          const wrow = c0 * k;
          for (let p = 0; p < k; p++) {
            let acc = 0;
            const crow = p * n;
            for (let j = 0; j < n; j++) acc += x.data[xrow + j] * gcols[crow + j];
            gw[wrow + p] += acc;
          }
        }
      }
    }
  });
  return out;
}

export function addChannelBias(x: Tensor, bias: Tensor): Tensor {
  const [b, c, h, w] = x.shape;
  if (bias.size !== c) throw new Error("bias size mismatch");
  const out = Tensor.zeros(x.shape);
  const plane = h * w;
  for (let bi = 0; bi < b; bi++) {
    for (let ci = 0; ci < c; ci++) {
      const base = (bi * c + ci) * plane;
      const bv = bias.data[ci];
      for (let j = 0; j < plane; j++) out.data[base + j] = x.data[base + j] + bv;
    }
  }
  record(out, () => {
    const g = out.grad!;
    if (x.requiresGrad) {
      const gx = x.ensureGrad();
      for (let i = 0; i < g.length; i++) gx[i] += g[i];
    }
    if (bias.requiresGrad) {
      const gb = bias.ensureGrad();
      for (let bi = 0; bi < b; bi++) {
        for (let ci = 0; ci < c; ci++) {
          const base = (bi * c + ci) * plane;
          let acc = 0;
          for (let j = 0; j < plane; j++) acc += g[base + j];
          gb[ci] += acc;
        }
      }
    }
  });
  return out;
}

export interface BnState {
  runningMean: Float64Array;
  runningVar: Float64Array;
  momentum: number;
}

/** Batch norm over (B, H, W) per channel; updates running stats in training. */
export function batchNorm(
  x: Tensor, gamma: Tensor, beta: Tensor, state: BnState, training: boolean,
): Tensor {
  const [b, c, h, w] = x.shape;
  const plane = h * w;
  const n = b * plane;
  const out = Tensor.zeros(x.shape);
  const mean = new Float64Array(c);
  const variance = new Float64Array(c);
  if (training) {
    for (let ci = 0; ci < c; ci++) {
      let acc = 0;
      for (let bi = 0; bi < b; bi++) {
        const base = (bi * c + ci) * plane;
        for (let j = 0; j < plane; j++) acc += x.data[base + j];
      }
      mean[ci] = acc / n;
      let vacc = 0;
      for (let bi = 0; bi < b; bi++) {
        const base = (bi * c + ci) * plane;
        for (let j = 0; j < plane; j++) {
          const d = x.data[base + j] - mean[ci];
          vacc += d * d;
        }
      }
      variance[ci] = vacc / n;
      state.runningMean[ci] =
        (1 - state.momentum) * state.runningMean[ci] + state.momentum * mean[ci];
      state.runningVar[ci] =
        (1 - state.momentum) * state.runningVar[ci] + state.momentum * variance[ci];
    }
  } else {
    mean.set(state.runningMean);
    variance.set(state.runningVar);
  }
  const invStd = new Float64Array(c);
  for (let ci = 0; ci < c; ci++) invStd[ci] = 1 / Math.sqrt(variance[ci] + BN_EPS);
  const xhat = new Float64Array(x.size);
  for (let bi = 0; bi < b; bi++) {
    for (let ci = 0; ci < c; ci++) {
      const base = (bi * c + ci) * plane;
      const m = mean[ci], is = invStd[ci], gm = gamma.data[ci], bt = beta.data[ci];
      for (let j = 0; j < plane; j++) {
        const xh = (x.data[base + j] - m) * is;
        xhat[base + j] = xh;
        out.data[base + j] = gm * xh + bt;
      }
    }
  }
  record(out, () => {
    const g = out.grad!;
    const ggamma = gamma.requiresGrad ? gamma.ensureGrad() : null;
    const gbeta = beta.requiresGrad ? beta.ensureGrad() : null;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    for (let ci = 0; ci < c; ci++) {
      let sumG = 0, sumGx = 0;
      for (let bi = 0; bi < b; bi++) {
        const base = (bi * c + ci) * plane;
        for (let j = 0; j < plane; j++) {
          sumG += g[base + j];
          sumGx += g[base + j] * xhat[base + j];
        }
      }
      if (gbeta) gbeta[ci] += sumG;
      if (ggamma) ggamma[ci] += sumGx;
      if (gx) {
        const gm = gamma.data[ci], is = invStd[ci];
        if (training) {
          for (let bi = 0; bi < b; bi++) {
            const base = (bi * c + ci) * plane;
            for (let j = 0; j < plane; j++) {
              gx[base + j] +=
                (gm * is / n) * (n * g[base + j] - sumG - xhat[base + j] * sumGx);
            }
          }
        } else {
          for (let bi = 0; bi < b; bi++) {
            const base = (bi * c + ci) * plane;
            for (let j = 0; j < plane; j++) gx[base + j] += gm * is * g[base + j];
          }
        }
      }
    }
  });
  return out;
}

/** Average pooling with ceil-mode edges, matching the inference engine. */
export function avgPool(x: Tensor, factor: number): Tensor {
  if (factor === 1) return x;
  const [b, c, h, w] = x.shape;
  const ho = Math.ceil(h / factor);
  const wo = Math.ceil(w / factor);
  const out = Tensor.zeros([b, c, ho, wo]);
  for (let bi = 0; bi < b; bi++) {
    for (let ci = 0; ci < c; ci++) {
      const inBase = (bi * c + ci) * h * w;
      const outBase = (bi * c + ci) * ho * wo;
      for (let oi = 0; oi < ho; oi++) {
        const i0 = oi * factor;
        const i1 = Math.min(i0 + factor, h);
        for (let oj = 0; oj < wo; oj++) {
          const j0 = oj * factor;
          const j1 = Math.min(j0 + factor, w);
          let acc = 0;
          for (let i = i0; i < i1; i++)
            for (let j = j0; j < j1; j++) acc += x.data[inBase + i * w + j];
          out.data[outBase + oi * wo + oj] = acc / ((i1 - i0) * (j1 - j0));
        }
      }
    }
  }
  record(out, () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let bi = 0; bi < b; bi++) {
      for (let ci = 0; ci < c; ci++) {
        const inBase = (bi * c + ci) * h * w;
        const outBase = (bi * c + ci) * ho * wo;
        for (let oi = 0; oi < ho; oi++) {
          const i0 = oi * factor;
          const i1 = Math.min(i0 + factor, h);
          for (let oj = 0; oj < wo; oj++) {
            const j0 = oj * factor;
            const j1 = Math.min(j0 + factor, w);
            const gv = g[outBase + oi * wo + oj] / ((i1 - i0) * (j1 - j0));
            for (let i = i0; i < i1; i++)
              for (let j = j0; j < j1; j++) gx[inBase + i * w + j] += gv;
          }
        }
      }
    }
  });
  return out;
}

export function concatChannels(a: Tensor, b: Tensor): Tensor {
  const [ba, ca, h, w] = a.shape;
  const [bb, cb, h2, w2] = b.shape;
  if (ba !== bb || h !== h2 || w !== w2) throw new Error("concat: spatial/batch mismatch");
  const out = Tensor.zeros([ba, ca + cb, h, w]);
  const plane = h * w;
  for (let bi = 0; bi < ba; bi++) {
    out.data.set(
      a.data.subarray(bi * ca * plane, (bi + 1) * ca * plane),
      bi * (ca + cb) * plane,
    );
    out.data.set(
      b.data.subarray(bi * cb * plane, (bi + 1) * cb * plane),
      bi * (ca + cb) * plane + ca * plane,
    );
  }
  record(out, () => {
    const g = out.grad!;
    for (let bi = 0; bi < ba; bi++) {
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        const src = bi * (ca + cb) * plane;
        const dst = bi * ca * plane;
        for (let i = 0; i < ca * plane; i++) ga[dst + i] += g[src + i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        const src = bi * (ca + cb) * plane + ca * plane;
        const dst = bi * cb * plane;
        for (let i = 0; i < cb * plane; i++) gb[dst + i] += g[src + i];
      }
    }
  });
  return out;
}

/** Reshape without copying semantics (records identity backward). */
export function reshape(a: Tensor, shape: number[]): Tensor {
  if (prod(shape) !== a.size) throw new Error(`reshape: ${a.shape} -> ${shape}`);
  const out = new Tensor(a.data.slice(), shape);
  record(out, () => {
    if (a.requiresGrad) {
      const g = out.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
  });
  return out;
}

/** Valid cross-correlation of each (B,1,H,W) map with a fixed kernel (no kernel grad). */
export function conv2dFixedKernel(x: Tensor, kernel: Float64Array, k: number): Tensor {
  const [b, c, h, w] = x.shape;
  if (c !== 1) throw new Error("conv2dFixedKernel expects single-channel maps");
  const ho = h - k + 1;
  const wo = w - k + 1;
  if (ho < 1 || wo < 1) throw new Error("image smaller than window");
  const out = Tensor.zeros([b, 1, ho, wo]);
  for (let bi = 0; bi < b; bi++) {
    const inBase = bi * h * w;
    const outBase = bi * ho * wo;
    for (let oi = 0; oi < ho; oi++) {
      for (let oj = 0; oj < wo; oj++) {
        let acc = 0;
        for (let ki = 0; ki < k; ki++) {
          const irow = inBase + (oi + ki) * w + oj;
          const krow = ki * k;
          for (let kj = 0; kj < k; kj++) acc += x.data[irow + kj] * kernel[krow + kj];
        }
        out.data[outBase + oi * wo + oj] = acc;
      }
    }
  }
  record(out, () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let bi = 0; bi < b; bi++) {
      const inBase = bi * h * w;
      const outBase = bi * ho * wo;
      for (let oi = 0; oi < ho; oi++) {
        for (let oj = 0; oj < wo; oj++) {
          const gv = g[outBase + oi * wo + oj];
          if (gv === 0) continue;
          for (let ki = 0; ki < k; ki++) {
            const irow = inBase + (oi + ki) * w + oj;
            const krow = ki * k;
            for (let kj = 0; kj < k; kj++) gx[irow + kj] += gv * kernel[krow + kj];
          }
        }
      }
    }
  });
  return out;
}

/** (B,3,H,W) -> (B,1,H,W) fixed channel mix (luma weights). */
export function channelWeightedSum(x: Tensor, weights: number[]): Tensor {
  const [b, c, h, w] = x.shape;
  if (c !== weights.length) throw new Error("channelWeightedSum: channel mismatch");
  const plane = h * w;
  const out = Tensor.zeros([b, 1, h, w]);
  for (let bi = 0; bi < b; bi++) {
    const outBase = bi * plane;
    for (let ci = 0; ci < c; ci++) {
      const inBase = (bi * c + ci) * plane;
      const wv = weights[ci];
      for (let j = 0; j < plane; j++) out.data[outBase + j] += wv * x.data[inBase + j];
    }
  }
  record(out, () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let bi = 0; bi < b; bi++) {
      const outBase = bi * plane;
      for (let ci = 0; ci < c; ci++) {
        const inBase = (bi * c + ci) * plane;
        const wv = weights[ci];
        for (let j = 0; j < plane; j++) gx[inBase + j] += wv * g[outBase + j];
      }
    }
  });
  return out;
}

/** Per-image mean over the decision map: (B,1,H,W) -> (B,). */
export function meanPerImage(x: Tensor): Tensor {
  const [b] = x.shape;
  const per = x.size / b;
  const out = Tensor.zeros([b]);
  for (let bi = 0; bi < b; bi++) {
    let acc = 0;
    for (let j = 0; j < per; j++) acc += x.data[bi * per + j];
    out.data[bi] = acc / per;
  }
  record(out, () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let bi = 0; bi < b; bi++) {
      const gv = g[bi] / per;
      for (let j = 0; j < per; j++) gx[bi * per + j] += gv;
    }
  });
  return out;
}

/** Detach: same values, no gradient connection. */
export function detach(x: Tensor): Tensor {
  return new Tensor(x.data.slice(), x.shape.slice());
}
