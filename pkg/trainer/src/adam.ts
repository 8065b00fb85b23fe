/** Adam with beta1 = 0.5 (adversarial-training convention), beta2 = 0.999. */

import { Tensor } from "./tensor";

export class Adam {
  private m = new Map<Tensor, Float64Array>();
  private v = new Map<Tensor, Float64Array>();
  private t = 0;

  constructor(
    public params: Tensor[],
    public beta1 = 0.5,
    public beta2 = 0.999,
    public eps = 1e-8,
  ) {
    for (const p of params) {
      this.m.set(p, new Float64Array(p.size));
      this.v.set(p, new Float64Array(p.size));
    }
  }

  step(lr: number): void {
    this.t += 1;
    const c1 = 1 - this.beta1 ** this.t;
    const c2 = 1 - this.beta2 ** this.t;
    for (const p of this.params) {
      if (!p.grad) continue;
      const m = this.m.get(p)!;
      const v = this.v.get(p)!;
      const g = p.grad;
      for (let i = 0; i < p.size; i++) {
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g[i];
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g[i] * g[i];
        const mhat = m[i] / c1;
        const vhat = v[i] / c2;
        p.data[i] -= (lr * mhat) / (Math.sqrt(vhat) + this.eps);
      }
    }
  }

  zeroGrads(): void {
    for (const p of this.params) p.zeroGrad();
  }
}
