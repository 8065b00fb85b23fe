/**
 * Minimal reverse-mode autodiff over dense float64 tensors.
 *
 * Ops record backward closures onto a module-level tape while `tapeActive`
 * is set; `backward(loss)` seeds d(loss)=1 and replays the tape in reverse.
 * All math runs in float64 (JS numbers), so finite-difference gradient
 * checks and the cross-engine loss parity hold to ~1e-9.
 */

export class Tensor {
  data: Float64Array;
  shape: number[];
  grad: Float64Array | null = null;
  requiresGrad: boolean;

  constructor(data: Float64Array, shape: number[], requiresGrad = false) {
    const size = shape.reduce((a, b) => a * b, 1);
    if (data.length !== size) {
      throw new Error(`tensor data length ${data.length} != shape product ${size}`);
    }
    this.data = data;
    this.shape = shape;
    this.requiresGrad = requiresGrad;
  }

  static zeros(shape: number[], requiresGrad = false): Tensor {
    return new Tensor(new Float64Array(shape.reduce((a, b) => a * b, 1)), shape, requiresGrad);
  }

  static from(values: number[] | Float64Array, shape: number[], requiresGrad = false): Tensor {
    return new Tensor(Float64Array.from(values), shape, requiresGrad);
  }

  static scalar(v: number): Tensor {
    return new Tensor(Float64Array.of(v), [1]);
  }

  get size(): number {
    return this.data.length;
  }

  item(): number {
    if (this.size !== 1) throw new Error(`item() on tensor of size ${this.size}`);
    return this.data[0];
  }

  ensureGrad(): Float64Array {
    if (!this.grad) this.grad = new Float64Array(this.size);
    return this.grad;
  }

  zeroGrad(): void {
    if (this.grad) this.grad.fill(0);
  }

  clone(): Tensor {
    return new Tensor(this.data.slice(), this.shape.slice(), this.requiresGrad);
  }
}

type BackwardFn = () => void;

let tape: BackwardFn[] = [];
let tapeActive = false;

export function startTape(): void {
  tape = [];
  tapeActive = true;
}

export function record(out: Tensor, fn: BackwardFn): void {
  if (tapeActive) {
    out.requiresGrad = true;
    tape.push(fn);
  }
}

export function recording(): boolean {
  return tapeActive;
}

/** Run fn with gradient recording suspended (eval-mode forward). */
export function noGrad<T>(fn: () => T): T {
  const prev = tapeActive;
  tapeActive = false;
  try {
    return fn();
  } finally {
    tapeActive = prev;
  }
}

/** Seed d(loss) = 1, replay the tape backwards, then drop it. */
export function backward(loss: Tensor): void {
  if (!tapeActive) throw new Error("backward() without an active tape");
  if (loss.size !== 1) throw new Error("backward() expects a scalar loss");
  loss.ensureGrad()[0] = 1.0;
  for (let i = tape.length - 1; i >= 0; i--) tape[i]();
  tape = [];
  tapeActive = false;
}

export function discardTape(): void {
  tape = [];
  tapeActive = false;
}

export function assertFinite(t: Tensor, what: string): void {
  for (let i = 0; i < t.data.length; i++) {
    if (!Number.isFinite(t.data[i])) throw new Error(`${what} contains non-finite values`);
  }
}
