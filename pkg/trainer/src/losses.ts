/**
 * The adversarial training objective, mirroring the evaluation engine's
 * semantics: adversarial terms on per-image mean logits ("ls" squared-error
 * form or "ce" log form on probabilities), L1 cycle/identity terms in
 * [-1,1] model space, structural terms as grayscale DSSIM, and the
 * fixed-order weighted total
 *
 *   adv_y + adv_x + boundary + alpha*cyc + beta*scyc + gamma*dssim + delta*id
 */

import { Tensor, record } from "./tensor";
import { add, addConst, addScalars, l1Mean, meanAll, mul, scale } from "./ops";
import { DEFAULT_SSIM, SsimConfig, dssimModel } from "./ssim";

export type AdvMode = "ce" | "ls";

export interface LossWeights {
  alpha: number;
  beta: number;
  gamma: number;
  delta: number;
}

export const DEFAULT_WEIGHTS: LossWeights = { alpha: 10, beta: 10, gamma: 10, delta: 0.1 };

function sigmoid(t: Tensor): Tensor {
  const out = Tensor.zeros(t.shape);
  for (let i = 0; i < t.size; i++) out.data[i] = 1 / (1 + Math.exp(-t.data[i]));
  record(out, () => {
    if (!t.requiresGrad) return;
    const g = out.grad!;
    const gt = t.ensureGrad();
    for (let i = 0; i < t.size; i++) gt[i] += g[i] * out.data[i] * (1 - out.data[i]);
  });
  return out;
}

function logTensor(t: Tensor): Tensor {
  const out = Tensor.zeros(t.shape);
  for (let i = 0; i < t.size; i++) out.data[i] = Math.log(t.data[i]);
  record(out, () => {
    if (!t.requiresGrad) return;
    const g = out.grad!;
    const gt = t.ensureGrad();
    for (let i = 0; i < t.size; i++) gt[i] += g[i] / t.data[i];
  });
  return out;
}

function squaredErrorTo(t: Tensor, target: number): Tensor {
  const shifted = addConst(t, -target);
  return meanAll(mul(shifted, shifted));
}

/**
 * Discriminator objective value for one domain pair of mean-logit batches.
 * "ls": E[(D(real)-1)^2] + E[D(fake)^2]; "ce": E[log p_real] + E[log(1-p_fake)]
 * on probabilities (the caller passes raw logits; ce applies sigmoid).
 */
export function advValue(dReal: Tensor, dFake: Tensor, mode: AdvMode): Tensor {
  if (mode === "ls") {
    return addScalars([
      { t: squaredErrorTo(dReal, 1.0), w: 1 },
      { t: squaredErrorTo(dFake, 0.0), w: 1 },
    ]);
  }
  const pReal = sigmoid(dReal);
  const pFake = sigmoid(dFake);
  return addScalars([
    { t: meanAll(logTensor(pReal)), w: 1 },
    { t: meanAll(logTensor(addConst(scale(pFake, -1.0), 1.0))), w: 1 },
  ]);
}

/** Boundary-control penalty: the source-domain discriminator on real y. */
export function boundaryValue(dOnRealY: Tensor, mode: AdvMode): Tensor {
  if (mode === "ls") return squaredErrorTo(dOnRealY, 0.0);
  const p = sigmoid(dOnRealY);
  return meanAll(logTensor(addConst(scale(p, -1.0), 1.0)));
}

/** Generator-side fooling term for one mean-logit batch of fakes. */
export function generatorAdvTerm(dFake: Tensor, mode: AdvMode): Tensor {
  if (mode === "ls") return squaredErrorTo(dFake, 1.0);
  const p = sigmoid(dFake);
  return meanAll(logTensor(addConst(scale(p, -1.0), 1.0)));
}

export function cycleLoss(x: Tensor, cycledX: Tensor, y: Tensor, cycledY: Tensor): Tensor {
  return addScalars([
    { t: l1Mean(cycledX, x), w: 1 },
    { t: l1Mean(cycledY, y), w: 1 },
  ]);
}

export function structuralCycleLoss(
  x: Tensor, cycledX: Tensor, y: Tensor, cycledY: Tensor, cfg: SsimConfig = DEFAULT_SSIM,
): Tensor {
  return add(dssimModel(cycledX, x, cfg), dssimModel(cycledY, y, cfg));
}

export function dssimMappedLoss(
  x: Tensor, fakeY: Tensor, y: Tensor, fakeX: Tensor, cfg: SsimConfig = DEFAULT_SSIM,
): Tensor {
  return add(dssimModel(fakeY, x, cfg), dssimModel(fakeX, y, cfg));
}

export function identityLoss(y: Tensor, idY: Tensor, x: Tensor, idX: Tensor): Tensor {
  return addScalars([
    { t: l1Mean(idY, y), w: 1 },
    { t: l1Mean(idX, x), w: 1 },
  ]);
}

export interface TermValues {
  adv_y: number;
  adv_x: number;
  boundary: number;
  cyc: number;
  scyc: number;
  dssim: number;
  id: number;
}

/** Fixed-order weighted total of raw term values (plain numbers). */
export function weightedTotal(t: TermValues, w: LossWeights = DEFAULT_WEIGHTS): number {
  let total = t.adv_y;
  total += t.adv_x;
  total += t.boundary;
  total += w.alpha * t.cyc;
  total += w.beta * t.scyc;
  total += w.gamma * t.dssim;
  total += w.delta * t.id;
  return total;
}
