/**
 * Replay buffer of previously generated images.  Below capacity the new
 * image is stored and returned; at capacity, with probability 1/2 a random
 * stored image is returned (and replaced by the new one), otherwise the new
 * image passes through untouched.
 */

import { SplitMix64 } from "./rng";
import { Tensor } from "./tensor";

export class ImageBuffer {
  private stored: Tensor[] = [];

  constructor(public capacity: number, private rng: SplitMix64) {}

  get size(): number {
    return this.stored.length;
  }

  /** Query one image (no gradient flows through buffer contents). */
  query(img: Tensor): Tensor {
    if (this.capacity <= 0) return img;
    if (this.stored.length < this.capacity) {
      this.stored.push(img.clone());
      return img;
    }
    if (this.rng.next() < 0.5) {
      const idx = this.rng.int(this.stored.length);
      const old = this.stored[idx];
      this.stored[idx] = img.clone();
      return old;
    }
    return img;
  }

  /** Query a batch item-by-item, reassembling a (B,C,H,W) tensor. */
  queryBatch(batch: Tensor): Tensor {
    const [b] = batch.shape;
    const per = batch.size / b;
    const itemShape = batch.shape.slice(1);
    const out = Tensor.zeros(batch.shape);
    for (let i = 0; i < b; i++) {
      const item = new Tensor(batch.data.slice(i * per, (i + 1) * per), itemShape);
      const chosen = this.query(item);
      out.data.set(chosen.data, i * per);
    }
    return out;
  }
}
