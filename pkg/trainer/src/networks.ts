/**
 * The U-Net generator and patch discriminator, built so their parameter
 * names match the weight-archive manifest one-to-one ("gen.enc1.conv.w",
 * "disc.block3.attn.wv", ...).  Encoder blocks: conv k4 s2 p1 -> batch norm
 * -> ReLU -> attention; decoder mirrors with transposed convs and skip
 * concatenation; final block: transposed conv + bias -> tanh.  Discriminator:
 * 4 blocks (strides 2,2,2,1, leaky ReLU) + 1x1 decision projection.
 *
 * Attention keys/values are average-pooled by ceil(max(h,w)/attentionMinRes),
 * the same rule the inference engine derives from archive metadata.
 */

import { SplitMix64 } from "./rng";
import { Tensor, record } from "./tensor";
import {
  BnState,
  addChannelBias,
  avgPool,
  batchNorm,
  concatChannels,
  conv2d,
  convTranspose2d,
  leakyRelu,
  matmul,
  relu,
  reshape,
  scaleByParam,
  softmaxRows,
  tanh,
  transpose2d,
  add,
} from "./ops";

export interface Arch {
  depth: number;
  baseChannels: number;
  channelCap: number;
  attentionMinRes: number;
  discBaseChannels: number;
  inChannels: number;
}

export const DEFAULT_TOY_ARCH: Arch = {
  depth: 3,
  baseChannels: 8,
  channelCap: 64,
  attentionMinRes: 8,
  discBaseChannels: 8,
  inChannels: 3,
};

export function encoderChannels(arch: Arch): number[] {
  const out: number[] = [];
  for (let i = 0; i < arch.depth; i++) {
    out.push(Math.min(arch.baseChannels * 2 ** i, arch.channelCap));
  }
  return out;
}

export function discriminatorChannels(arch: Arch): number[] {
  const out: number[] = [];
  for (let i = 0; i < 4; i++) {
    out.push(Math.min(arch.discBaseChannels * 2 ** i, arch.channelCap));
  }
  return out;
}

export class ParamStore {
  params = new Map<string, Tensor>();
  bnStates = new Map<string, BnState>();

  tensor(name: string): Tensor {
    const t = this.params.get(name);
    if (!t) throw new Error(`missing parameter ${name}`);
    return t;
  }

  addParam(name: string, t: Tensor): Tensor {
    t.requiresGrad = true;
    this.params.set(name, t);
    return t;
  }

  trainable(prefix: string, excludeMu = false): Tensor[] {
    const out: Tensor[] = [];
    for (const [name, t] of this.params) {
      if (!name.startsWith(prefix)) continue;
      if (excludeMu && name.endsWith(".attn.mu")) continue;
      out.push(t);
    }
    return out;
  }
}

function initConv(store: ParamStore, name: string, shape: number[], rng: SplitMix64): void {
  const t = Tensor.zeros(shape);
  for (let i = 0; i < t.size; i++) t.data[i] = 0.02 * rng.normal();
  store.addParam(name, t);
}

function initNorm(store: ParamStore, block: string, c: number): void {
  const gamma = Tensor.zeros([c]);
  gamma.data.fill(1);
  store.addParam(`${block}.norm.gamma`, gamma);
  store.addParam(`${block}.norm.beta`, Tensor.zeros([c]));
  store.bnStates.set(block, {
    runningMean: new Float64Array(c),
    runningVar: new Float64Array(c).fill(1),
    momentum: 0.1,
  });
}

function initAttention(store: ParamStore, block: string, c: number, rng: SplitMix64): void {
  const cBar = Math.floor(c / 8);
  initConv(store, `${block}.attn.wq`, [cBar, c], rng);
  initConv(store, `${block}.attn.wk`, [cBar, c], rng);
  initConv(store, `${block}.attn.wv`, [c, c], rng);
  store.addParam(`${block}.attn.mu`, Tensor.zeros([1]));
}

function attentionLayer(
  store: ParamStore, block: string, x: Tensor, minRes: number,
): Tensor {
  const [b, c, h, w] = x.shape;
  const factor = Math.max(1, Math.ceil(Math.max(h, w) / minRes));
  const kvMap = factor > 1 ? avgPool(x, factor) : x;
  const nKv = kvMap.shape[2] * kvMap.shape[3];
  const n = h * w;
  const wq = store.tensor(`${block}.attn.wq`);
  const wk = store.tensor(`${block}.attn.wk`);
  const wv = store.tensor(`${block}.attn.wv`);
  const mu = store.tensor(`${block}.attn.mu`);

  const outs: Tensor[] = [];
  for (let bi = 0; bi < b; bi++) {
    const xi = sliceImage(x, bi);          // (c, n)
    const kvi = sliceImage(kvMap, bi);     // (c, nKv)
    const q = matmul(wq, xi);              // (cBar, n)
    const k = matmul(wk, kvi);             // (cBar, nKv)
    const v = matmul(wv, kvi);             // (c, nKv)
    const logits = matmul(transpose2d(q), k);   // (n, nKv)
    const alpha = softmaxRows(logits);
    const o = matmul(v, transpose2d(alpha));    // (c, n)
    outs.push(add(scaleByParam(o, mu), xi));
  }
  return stackImages(outs, [b, c, h, w]);
}

/** View one batch item of a (B,C,H,W) tensor as (C, H*W), with backward. */
function sliceImage(x: Tensor, index: number): Tensor {
  const [, c, h, w] = x.shape;
  const per = c * h * w;
  const out = new Tensor(x.data.slice(index * per, (index + 1) * per), [c, h * w]);
  record(out, () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let i = 0; i < per; i++) gx[index * per + i] += g[i];
  });
  return out;
}

function stackImages(items: Tensor[], shape: number[]): Tensor {
  const out = Tensor.zeros(shape);
  const per = items[0].size;
  for (let i = 0; i < items.length; i++) out.data.set(items[i].data, i * per);
  record(out, () => {
    const g = out.grad!;
    for (let i = 0; i < items.length; i++) {
      if (!items[i].requiresGrad) continue;
      const gi = items[i].ensureGrad();
      for (let j = 0; j < per; j++) gi[j] += g[i * per + j];
    }
  });
  return out;
}

export class Generator {
  constructor(
    public store: ParamStore,
    public prefix: string,
    public arch: Arch,
  ) {}

  static build(prefix: string, arch: Arch, rng: SplitMix64): Generator {
    const store = new ParamStore();
    const enc = encoderChannels(arch);
    let prev = arch.inChannels;
    for (let i = 1; i <= arch.depth; i++) {
      const c = enc[i - 1];
      initConv(store, `${prefix}.enc${i}.conv.w`, [c, prev, 4, 4], rng);
      initNorm(store, `${prefix}.enc${i}`, c);
      initAttention(store, `${prefix}.enc${i}`, c, rng);
      prev = c;
    }
    for (let j = 1; j < arch.depth; j++) {
      const inCh = j === 1 ? enc[arch.depth - 1] : 2 * enc[arch.depth - j];
      const outCh = enc[arch.depth - j - 1];
      initConv(store, `${prefix}.dec${j}.conv.w`, [inCh, outCh, 4, 4], rng);
      initNorm(store, `${prefix}.dec${j}`, outCh);
      initAttention(store, `${prefix}.dec${j}`, outCh, rng);
    }
    initConv(store, `${prefix}.out.conv.w`, [2 * enc[0], arch.inChannels, 4, 4], rng);
    store.addParam(`${prefix}.out.conv.b`, Tensor.zeros([arch.inChannels]));
    return new Generator(store, prefix, arch);
  }

  forward(x: Tensor, training: boolean): Tensor {
    const { store, prefix, arch } = this;
    const skips: Tensor[] = [];
    let cur = x;
    for (let i = 1; i <= arch.depth; i++) {
      const block = `${prefix}.enc${i}`;
      cur = conv2d(cur, store.tensor(`${block}.conv.w`), 2, 1);
      cur = batchNorm(
        cur, store.tensor(`${block}.norm.gamma`), store.tensor(`${block}.norm.beta`),
        store.bnStates.get(block)!, training,
      );
      cur = relu(cur);
      cur = attentionLayer(store, block, cur, arch.attentionMinRes);
      skips.push(cur);
    }
    for (let j = 1; j < arch.depth; j++) {
      const block = `${prefix}.dec${j}`;
      const inp = j === 1 ? cur : concatChannels(cur, skips[arch.depth - j]);
      cur = convTranspose2d(inp, store.tensor(`${block}.conv.w`), 2, 1);
      cur = batchNorm(
        cur, store.tensor(`${block}.norm.gamma`), store.tensor(`${block}.norm.beta`),
        store.bnStates.get(block)!, training,
      );
      cur = relu(cur);
      cur = attentionLayer(store, block, cur, arch.attentionMinRes);
    }
    const finalIn = concatChannels(cur, skips[0]);
    let out = convTranspose2d(finalIn, store.tensor(`${prefix}.out.conv.w`), 2, 1);
    out = addChannelBias(out, store.tensor(`${prefix}.out.conv.b`));
    return tanh(out);
  }
}

export class Discriminator {
  constructor(
    public store: ParamStore,
    public prefix: string,
    public arch: Arch,
  ) {}

  static build(prefix: string, arch: Arch, rng: SplitMix64): Discriminator {
    const store = new ParamStore();
    const ch = discriminatorChannels(arch);
    let prev = arch.inChannels;
    for (let i = 1; i <= 4; i++) {
      initConv(store, `${prefix}.block${i}.conv.w`, [ch[i - 1], prev, 4, 4], rng);
      initNorm(store, `${prefix}.block${i}`, ch[i - 1]);
      initAttention(store, `${prefix}.block${i}`, ch[i - 1], rng);
      prev = ch[i - 1];
    }
    initConv(store, `${prefix}.final.conv.w`, [1, prev, 1, 1], rng);
    store.addParam(`${prefix}.final.conv.b`, Tensor.zeros([1]));
    return new Discriminator(store, prefix, arch);
  }

  /** Raw-logit decision map (B, 1, h, w). */
  forward(x: Tensor, training: boolean): Tensor {
    const { store, prefix, arch } = this;
    const strides = [2, 2, 2, 1];
    let cur = x;
    for (let i = 1; i <= 4; i++) {
      const block = `${prefix}.block${i}`;
      cur = conv2d(cur, store.tensor(`${block}.conv.w`), strides[i - 1], 1);
      cur = batchNorm(
        cur, store.tensor(`${block}.norm.gamma`), store.tensor(`${block}.norm.beta`),
        store.bnStates.get(block)!, training,
      );
      cur = leakyRelu(cur);
      cur = attentionLayer(store, block, cur, arch.attentionMinRes);
    }
    cur = conv2d(cur, store.tensor(`${prefix}.final.conv.w`), 1, 0);
    return addChannelBias(cur, store.tensor(`${prefix}.final.conv.b`));
  }
}
