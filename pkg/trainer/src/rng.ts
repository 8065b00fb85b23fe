/**
 * Deterministic RNG: splitmix64 core (bit-identical to the inference
 * engine's power-iteration start vectors) plus float/normal/shuffle helpers.
 */

const MASK = (1n << 64n) - 1n;

export class SplitMix64 {
  private state: bigint;

  constructor(seed: number | bigint) {
    this.state = BigInt(seed) & MASK;
  }

  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
    z = z ^ (z >> 31n);
    return z;
  }

  /** Uniform in [0, 1): top 53 bits. */
  next(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.next();
  }

  int(n: number): number {
    return Math.floor(this.next() * n);
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    let u = this.next();
    if (u <= 0) u = 1e-12;
    const v = this.next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }

  shuffle<T>(arr: T[]): void {
    for (let i = arr.length - 1; i > 0; i--) {
      const j = this.int(i + 1);
      [arr[i], arr[j]] = [arr[j], arr[i]];
    }
  }
}

/**
 * Deterministic pseudo-random unit vector; must match the inference engine's
 * start vector bit for bit (same splitmix64 stream, (z>>11)/2^53 - 0.5).
 */
export function splitmixUnitVector(size: number, seed: bigint = 0x5a175eedn): Float64Array {
  const rng = new SplitMix64(seed);
  const out = new Float64Array(size);
  let normSq = 0;
  for (let i = 0; i < size; i++) {
    out[i] = rng.next() - 0.5;
    normSq += out[i] * out[i];
  }
  let norm = Math.sqrt(normSq);
  if (norm === 0) {
    out[0] = 1;
    norm = 1;
  }
  for (let i = 0; i < size; i++) out[i] /= norm;
  return out;
}
