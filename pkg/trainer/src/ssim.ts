/**
 * Differentiable windowed SSIM on [0,1] grayscale maps, mirroring the
 * inference engine's metric: Gaussian 11x11 sigma 1.5 window (weights sum
 * to 1), valid windows only, one-pass weighted stats, product-form index,
 * unweighted mean over window positions.
 */

import { Tensor } from "./tensor";
import {
  add,
  addConst,
  channelWeightedSum,
  conv2dFixedKernel,
  div,
  meanAll,
  mul,
  scale,
  sub,
} from "./ops";

export const LUMA = [0.299, 0.587, 0.114];

export interface SsimConfig {
  window: number;
  sigma: number;
  c1: number;
  c2: number;
}

export const DEFAULT_SSIM: SsimConfig = {
  window: 11,
  sigma: 1.5,
  c1: 0.01 ** 2,
  c2: 0.03 ** 2,
};

export function gaussianKernel(window: number, sigma: number): Float64Array {
  const half = (window - 1) / 2;
  const g = new Float64Array(window);
  for (let i = 0; i < window; i++) {
    const d = i - half;
    g[i] = Math.exp(-(d * d) / (2 * sigma * sigma));
  }
  const k2 = new Float64Array(window * window);
  let sum = 0;
  for (let i = 0; i < window; i++)
    for (let j = 0; j < window; j++) {
      k2[i * window + j] = g[i] * g[j];
      sum += k2[i * window + j];
    }
  for (let i = 0; i < k2.length; i++) k2[i] /= sum;
  return k2;
}

/** Model-space (B,3,H,W) in [-1,1] -> grayscale (B,1,H,W) in [0,1]. */
export function gray01(x: Tensor): Tensor {
  const half = scale(addConst(x, 1.0), 0.5);
  return channelWeightedSum(half, LUMA);
}

/** Mean SSIM between two (B,1,H,W) grayscale maps (scalar tensor). */
export function ssimGray(a: Tensor, b: Tensor, cfg: SsimConfig = DEFAULT_SSIM): Tensor {
  const kernel = gaussianKernel(cfg.window, cfg.sigma);
  const k = cfg.window;
  const muA = conv2dFixedKernel(a, kernel, k);
  const muB = conv2dFixedKernel(b, kernel, k);
  const eAA = conv2dFixedKernel(mul(a, a), kernel, k);
  const eBB = conv2dFixedKernel(mul(b, b), kernel, k);
  const eAB = conv2dFixedKernel(mul(a, b), kernel, k);
  const varA = sub(eAA, mul(muA, muA));
  const varB = sub(eBB, mul(muB, muB));
  const cov = sub(eAB, mul(muA, muB));

  const num = mul(
    addConst(scale(mul(muA, muB), 2.0), cfg.c1),
    addConst(scale(cov, 2.0), cfg.c2),
  );
  const den = mul(
    addConst(add(mul(muA, muA), mul(muB, muB)), cfg.c1),
    addConst(add(varA, varB), cfg.c2),
  );
  return meanAll(div(num, den));
}

/** Batch DSSIM (1 - ssim)/2 between model-space images. */
export function dssimModel(a: Tensor, b: Tensor, cfg: SsimConfig = DEFAULT_SSIM): Tensor {
  const s = ssimGray(gray01(a), gray01(b), cfg);
  return scale(addConst(scale(s, -1.0), 1.0), 0.5);
}
