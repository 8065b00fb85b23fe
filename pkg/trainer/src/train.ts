/**
 * Adversarial training of the two translation generators and two
 * discriminators: alternating Adam updates (lr 2e-4, batch 16, flat epochs
 * then linear decay to zero), least-squares or cross-entropy adversarial
 * terms on buffered fakes, boundary control on the source-domain
 * discriminator, spectral projection after every step, per-epoch loss
 * logging with probe-batch bundle dumps, and export in the shared archive
 * format.
 */

import * as fs from "fs";
import * as path from "path";
import { Adam } from "./adam";
import { ImageBuffer } from "./buffer";
import { Domain } from "./data";
import {
  AdvMode,
  DEFAULT_WEIGHTS,
  LossWeights,
  TermValues,
  advValue,
  boundaryValue,
  cycleLoss,
  dssimMappedLoss,
  generatorAdvTerm,
  identityLoss,
  structuralCycleLoss,
  weightedTotal,
} from "./losses";
import { Arch, DEFAULT_TOY_ARCH, Discriminator, Generator, ParamStore } from "./networks";
import { meanPerImage, addScalars, scale } from "./ops";
import { SplitMix64 } from "./rng";
import { exportNormalize, isSpectralConstrained, SpectralProjector } from "./spectral";
import { DEFAULT_SSIM, SsimConfig, gray01, ssimGray } from "./ssim";
import { Tensor, backward, discardTape, noGrad, startTape } from "./tensor";
import { NamedTensor, TensorMap, metaTensors, readArchive, writeArchive } from "./weights";
import { fromModelSpace, writePng } from "./png";

export interface TrainConfig {
  domainsX: string[];
  domainY: string;
  holdoutX: string[];
  holdoutY: string;
  outDir: string;
  lr: number;
  batch: number;
  epochsFlat: number;
  epochsDecay: number;
  bufferSize: number;
  advMode: AdvMode;
  weights: LossWeights;
  seed: number;
  warmupSteps: number;
  arch: Arch;
  probeSize: number;
  checkpointEvery: number;
  ssim: SsimConfig;
}

export function defaultConfig(): TrainConfig {
  return {
    domainsX: [],
    domainY: "",
    holdoutX: [],
    holdoutY: "",
    outDir: "runs/toy",
    lr: 2e-4,
    batch: 16,
    epochsFlat: 5,
    epochsDecay: 5,
    bufferSize: 50,
    advMode: "ls",
    weights: { ...DEFAULT_WEIGHTS },
    seed: 1,
    warmupSteps: 120,
    arch: { ...DEFAULT_TOY_ARCH },
    probeSize: 4,
    checkpointEvery: 1,
    ssim: { ...DEFAULT_SSIM },
  };
}

/** lr(e) = base * (1 - max(0, e - flat)/decay), e counted from 1. */
export function learningRate(base: number, epoch: number, flat: number, decay: number): number {
  return base * (1 - Math.max(0, epoch - flat) / decay);
}

function zeroMuGrads(store: ParamStore, prefix: string): void {
  for (const [name, t] of store.params) {
    if (name.startsWith(prefix) && name.endsWith(".attn.mu") && t.grad) t.grad.fill(0);
  }
}

function froundTensor(t: Tensor): Tensor {
  const out = Tensor.zeros(t.shape);
  for (let i = 0; i < t.size; i++) out.data[i] = Math.fround(t.data[i]);
  return out;
}

function asNamed(t: Tensor): NamedTensor {
  return { shape: t.shape.slice(), data: t.data.slice() };
}

/** Network tensors (params + running stats) under their archive names. */
export function networkTensors(store: ParamStore, renamePrefix?: [string, string]): TensorMap {
  const out: TensorMap = new Map();
  const rename = (name: string) =>
    renamePrefix ? name.replace(renamePrefix[0], renamePrefix[1]) : name;
  for (const [name, t] of store.params) out.set(rename(name), asNamed(t));
  for (const [block, st] of store.bnStates) {
    out.set(`${rename(block)}.norm.running_mean`, {
      shape: [st.runningMean.length],
      data: st.runningMean.slice(),
    });
    out.set(`${rename(block)}.norm.running_var`, {
      shape: [st.runningVar.length],
      data: st.runningVar.slice(),
    });
  }
  return out;
}

export function loadNetworkTensors(store: ParamStore, tensors: TensorMap, prefix: string): void {
  for (const [name, t] of store.params) {
    const src = tensors.get(name);
    if (!src) throw new Error(`archive missing ${name}`);
    if (src.data.length !== t.size) throw new Error(`${name}: size mismatch`);
    t.data.set(src.data);
  }
  for (const [block, st] of store.bnStates) {
    const rm = tensors.get(`${block}.norm.running_mean`);
    const rv = tensors.get(`${block}.norm.running_var`);
    if (!rm || !rv) throw new Error(`archive missing running stats for ${block}`);
    st.runningMean.set(rm.data);
    st.runningVar.set(rv.data);
  }
  void prefix;
}

/** Deployment archive: generator + target-domain discriminator + metadata. */
export function exportArchive(
  gen: Generator, disc: Discriminator | null, arch: Arch, outPath: string,
): void {
  const tensors: TensorMap = new Map();
  for (const [name, t] of networkTensors(gen.store)) tensors.set(name, t);
  if (disc) for (const [name, t] of networkTensors(disc.store)) tensors.set(name, t);
  for (const [name, t] of metaTensors(arch, disc !== null)) tensors.set(name, t);
  for (const [name, t] of tensors) {
    if (!name.startsWith("meta/") && isSpectralConstrained(name)) {
      exportNormalize(t.data, t.shape[0]);
    }
  }
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  writeArchive(tensors, outPath);
}

export interface ProbeResult {
  terms: TermValues;
  total: number;
  bundle: TensorMap;
}

/**
 * Eval-mode probe: run the fixed batches through both generators and
 * discriminators, quantize everything to f32 (what the dump stores), and
 * compute the logged terms on the quantized values so an external
 * recomputation from the dump reproduces them.
 */
export function evaluateProbe(
  genToY: Generator, genToX: Generator, discY: Discriminator, discX: Discriminator,
  xb: Tensor, yb: Tensor, mode: AdvMode, w: LossWeights, ssim: SsimConfig,
): ProbeResult {
  return noGrad(() => {
    const fakeY = froundTensor(genToY.forward(xb, false));
    const fakeX = froundTensor(genToX.forward(yb, false));
    const cycledX = froundTensor(genToX.forward(fakeY, false));
    const cycledY = froundTensor(genToY.forward(fakeX, false));
    const idY = froundTensor(genToY.forward(yb, false));
    const idX = froundTensor(genToX.forward(xb, false));
    const x = froundTensor(xb);
    const y = froundTensor(yb);

    const logit = (d: Tensor) => meanPerImage(d);
    let dYReal = logit(discY.forward(y, false));
    let dYFake = logit(discY.forward(fakeY, false));
    let dXReal = logit(discX.forward(x, false));
    let dXFake = logit(discX.forward(fakeX, false));
    let dXOnY = logit(discX.forward(y, false));
    if (mode === "ce") {
      const sig = (t: Tensor) => {
        const out = Tensor.zeros(t.shape);
        for (let i = 0; i < t.size; i++) out.data[i] = 1 / (1 + Math.exp(-t.data[i]));
        return out;
      };
      dYReal = sig(dYReal); dYFake = sig(dYFake);
      dXReal = sig(dXReal); dXFake = sig(dXFake); dXOnY = sig(dXOnY);
    }
    dYReal = froundTensor(dYReal); dYFake = froundTensor(dYFake);
    dXReal = froundTensor(dXReal); dXFake = froundTensor(dXFake);
    dXOnY = froundTensor(dXOnY);

    const advY = mode === "ls"
      ? advValue(dYReal, dYFake, "ls")
      : ceValueFromProbs(dYReal, dYFake);
    const advX = mode === "ls"
      ? advValue(dXReal, dXFake, "ls")
      : ceValueFromProbs(dXReal, dXFake);
    const bound = mode === "ls" ? boundaryValue(dXOnY, "ls") : ceBoundaryFromProbs(dXOnY);

    const terms: TermValues = {
      adv_y: advY.item(),
      adv_x: advX.item(),
      boundary: bound.item(),
      cyc: cycleLoss(x, cycledX, y, cycledY).item(),
      scyc: structuralCycleLoss(x, cycledX, y, cycledY, ssim).item(),
      dssim: dssimMappedLoss(x, fakeY, y, fakeX, ssim).item(),
      id: identityLoss(y, idY, x, idX).item(),
    };
    const total = weightedTotal(terms, w);

    const bundle: TensorMap = new Map();
    const put = (name: string, t: Tensor) => bundle.set(name, asNamed(t));
    put("x", x); put("y", y); put("fake_y", fakeY); put("fake_x", fakeX);
    put("cycled_x", cycledX); put("cycled_y", cycledY); put("id_x", idX); put("id_y", idY);
    put("d_y_real", dYReal); put("d_y_fake", dYFake);
    put("d_x_real", dXReal); put("d_x_fake", dXFake); put("d_x_on_real_y", dXOnY);
    return { terms, total, bundle };
  });
}

function ceValueFromProbs(pReal: Tensor, pFake: Tensor): Tensor {
  let acc = 0;
  for (let i = 0; i < pReal.size; i++) acc += Math.log(pReal.data[i]);
  let acc2 = 0;
  for (let i = 0; i < pFake.size; i++) acc2 += Math.log(1 - pFake.data[i]);
  return Tensor.scalar(acc / pReal.size + acc2 / pFake.size);
}

function ceBoundaryFromProbs(pOnY: Tensor): Tensor {
  let acc = 0;
  for (let i = 0; i < pOnY.size; i++) acc += Math.log(1 - pOnY.data[i]);
  return Tensor.scalar(acc / pOnY.size);
}

/** Mean grayscale SSIM of cycle reconstructions over a held-out domain. */
export function holdoutCycleSsim(
  genToY: Generator, genToX: Generator, holdX: Domain, holdY: Domain,
  batch: number, ssim: SsimConfig,
): { x: number; y: number; mean: number } {
  return noGrad(() => {
    const evalDir = (domain: Domain, first: Generator, second: Generator): number => {
      let acc = 0;
      let count = 0;
      for (let start = 0; start < domain.images.length; start += batch) {
        const idx = [];
        for (let i = start; i < Math.min(start + batch, domain.images.length); i++) idx.push(i);
        const b = domain.batch(idx);
        const cycled = second.forward(first.forward(b, false), false);
        acc += ssimGray(gray01(cycled), gray01(b), ssim).item() * idx.length;
        count += idx.length;
      }
      return acc / count;
    };
    const x = evalDir(holdX, genToY, genToX);
    const y = evalDir(holdY, genToX, genToY);
    return { x, y, mean: (x + y) / 2 };
  });
}

export interface TrainResult {
  exportPath: string;
  lossCsv: string;
  metricsCsv: string;
  initialCycleSsim: number;
  finalCycleSsim: number;
}

export function train(cfg: TrainConfig): TrainResult {
  fs.mkdirSync(cfg.outDir, { recursive: true });
  const rng = new SplitMix64(cfg.seed);
  const dataX = new Domain(cfg.domainsX);
  const dataY = new Domain([cfg.domainY]);
  const holdX = new Domain(cfg.holdoutX);
  const holdY = new Domain([cfg.holdoutY]);

  const genToY = Generator.build("gen", cfg.arch, rng);
  const genToX = Generator.build("genb", cfg.arch, rng);
  const discY = Discriminator.build("disc", cfg.arch, rng);
  const discX = Discriminator.build("discb", cfg.arch, rng);

  const snGenY = new SpectralProjector(genToY.store, "gen");
  const snGenX = new SpectralProjector(genToX.store, "genb");
  const snDiscY = new SpectralProjector(discY.store, "disc");
  const snDiscX = new SpectralProjector(discX.store, "discb");
  // Constrain kernels from the very first forward pass.
  snGenY.project(10); snGenX.project(10); snDiscY.project(10); snDiscX.project(10);

  const gParams = [...genToY.store.trainable("gen"), ...genToX.store.trainable("genb")];
  const dParams = [...discY.store.trainable("disc"), ...discX.store.trainable("discb")];
  const adamG = new Adam(gParams);
  const adamD = new Adam(dParams);

  const bufY = new ImageBuffer(cfg.bufferSize, new SplitMix64(cfg.seed + 101));
  const bufX = new ImageBuffer(cfg.bufferSize, new SplitMix64(cfg.seed + 202));

  const probeX = dataX.batch(range(Math.min(cfg.probeSize, dataX.images.length)));
  const probeY = dataY.batch(range(Math.min(cfg.probeSize, dataY.images.length)));

  const initial = holdoutCycleSsim(genToY, genToX, holdX, holdY, cfg.batch, cfg.ssim);
  console.log(`epoch 0: holdout cycle-SSIM x=${initial.x.toFixed(4)} y=${initial.y.toFixed(4)}`);

  // Identity warmup: both generators learn to reproduce their input before
  // the adversarial phase; attention scales stay frozen at zero.
  const allImages = [...dataX.images, ...dataY.images];
  const side = dataX.side;
  for (let step = 0; step < cfg.warmupSteps; step++) {
    const idx = sampleIndices(rng, allImages.length, cfg.batch);
    const b = batchFrom(allImages, idx, side);
    startTape();
    const outY = genToY.forward(b, true);
    const outX = genToX.forward(b, true);
    const loss = addScalars([
      { t: cycleLoss(b, outY, b, outX), w: 1 },
    ]);
    adamG.zeroGrads();
    backward(loss);
    zeroMuGrads(genToY.store, "gen");
    zeroMuGrads(genToX.store, "genb");
    adamG.step(cfg.lr);
    snGenY.project(); snGenX.project();
    if ((step + 1) % 40 === 0) {
      console.log(`warmup ${step + 1}/${cfg.warmupSteps}: identity L1 ${loss.item().toFixed(4)}`);
    }
  }

  const lossCsv = path.join(cfg.outDir, "losses.csv");
  const metricsCsv = path.join(cfg.outDir, "metrics.csv");
  fs.writeFileSync(lossCsv, "epoch,adv_y,adv_x,boundary,cyc,scyc,dssim,id,total,lr\n");
  fs.writeFileSync(metricsCsv, "epoch,cycle_ssim_x,cycle_ssim_y,cycle_ssim_mean\n");

  const totalEpochs = cfg.epochsFlat + cfg.epochsDecay;
  const iterations = Math.ceil(dataX.images.length / cfg.batch);
  let yOrder = shuffled(rng, dataY.images.length);
  let yCursor = 0;

  for (let epoch = 1; epoch <= totalEpochs; epoch++) {
    const lr = learningRate(cfg.lr, epoch, cfg.epochsFlat, cfg.epochsDecay);
    const xOrder = shuffled(rng, dataX.images.length);
    for (let it = 0; it < iterations; it++) {
      const xIdx = xOrder.slice(it * cfg.batch, Math.min((it + 1) * cfg.batch, xOrder.length));
      if (xIdx.length === 0) continue;
      const yIdx: number[] = [];
      for (let i = 0; i < xIdx.length; i++) {
        if (yCursor >= yOrder.length) {
          yOrder = shuffled(rng, dataY.images.length);
          yCursor = 0;
        }
        yIdx.push(yOrder[yCursor++]);
      }
      const xb = dataX.batch(xIdx);
      const yb = dataY.batch(yIdx);

      // Generator step: fresh fakes, full objective.
      startTape();
      const fakeY = genToY.forward(xb, true);
      const fakeX = genToX.forward(yb, true);
      const cycledX = genToX.forward(fakeY, true);
      const cycledY = genToY.forward(fakeX, true);
      const idY = genToY.forward(yb, true);
      const idX = genToX.forward(xb, true);
      const dYFake = meanPerImage(discY.forward(fakeY, true));
      const dXFake = meanPerImage(discX.forward(fakeX, true));
      const gLoss = addScalars([
        { t: generatorAdvTerm(dYFake, cfg.advMode), w: 1 },
        { t: generatorAdvTerm(dXFake, cfg.advMode), w: 1 },
        { t: cycleLoss(xb, cycledX, yb, cycledY), w: cfg.weights.alpha },
        { t: structuralCycleLoss(xb, cycledX, yb, cycledY, cfg.ssim), w: cfg.weights.beta },
        { t: dssimMappedLoss(xb, fakeY, yb, fakeX, cfg.ssim), w: cfg.weights.gamma },
        { t: identityLoss(yb, idY, xb, idX), w: cfg.weights.delta },
      ]);
      adamG.zeroGrads();
      adamD.zeroGrads(); // discriminators accumulate grads from the G pass; discard them
      backward(gLoss);
      adamG.step(lr);
      snGenY.project(); snGenX.project();

      // Discriminator step: buffered fakes, boundary control on D_X.
      const fakeYBuf = bufY.queryBatch(new Tensor(fakeY.data.slice(), fakeY.shape.slice()));
      const fakeXBuf = bufX.queryBatch(new Tensor(fakeX.data.slice(), fakeX.shape.slice()));
      startTape();
      const dYReal = meanPerImage(discY.forward(yb, true));
      const dYFakeB = meanPerImage(discY.forward(fakeYBuf, true));
      const dXReal = meanPerImage(discX.forward(xb, true));
      const dXFakeB = meanPerImage(discX.forward(fakeXBuf, true));
      const dXOnY = meanPerImage(discX.forward(yb, true));
      let dLoss: Tensor;
      if (cfg.advMode === "ls") {
        dLoss = addScalars([
          { t: advValue(dYReal, dYFakeB, "ls"), w: 1 },
          { t: advValue(dXReal, dXFakeB, "ls"), w: 1 },
          { t: boundaryValue(dXOnY, "ls"), w: 1 },
        ]);
      } else {
        // D maximizes the log objective: minimize its negation.
        dLoss = scale(
          addScalars([
            { t: advValue(dYReal, dYFakeB, "ce"), w: 1 },
            { t: advValue(dXReal, dXFakeB, "ce"), w: 1 },
            { t: boundaryValue(dXOnY, "ce"), w: 1 },
          ]),
          -1,
        );
      }
      adamD.zeroGrads();
      adamG.zeroGrads();
      backward(dLoss);
      adamD.step(lr);
      snDiscY.project(); snDiscX.project();
    }

    const probe = evaluateProbe(
      genToY, genToX, discY, discX, probeX, probeY, cfg.advMode, cfg.weights, cfg.ssim,
    );
    const t = probe.terms;
    fs.appendFileSync(
      lossCsv,
      `${epoch},${fmt(t.adv_y)},${fmt(t.adv_x)},${fmt(t.boundary)},${fmt(t.cyc)},` +
        `${fmt(t.scyc)},${fmt(t.dssim)},${fmt(t.id)},${fmt(probe.total)},${fmt(lr)}\n`,
    );
    writeArchive(probe.bundle, path.join(cfg.outDir, `bundle_${epoch}.saw`));

    const cyc = holdoutCycleSsim(genToY, genToX, holdX, holdY, cfg.batch, cfg.ssim);
    fs.appendFileSync(
      metricsCsv, `${epoch},${fmt(cyc.x)},${fmt(cyc.y)},${fmt(cyc.mean)}\n`,
    );
    console.log(
      `epoch ${epoch}/${totalEpochs}: total ${probe.total.toFixed(3)} ` +
        `cycle-SSIM x=${cyc.x.toFixed(4)} y=${cyc.y.toFixed(4)} lr=${lr.toExponential(2)}`,
    );

    if (cfg.checkpointEvery > 0 && epoch % cfg.checkpointEvery === 0) {
      const ckpt: TensorMap = new Map();
      for (const net of [genToY.store, genToX.store, discY.store, discX.store]) {
        for (const [name, t2] of networkTensors(net)) ckpt.set(name, t2);
      }
      for (const [name, t2] of metaTensors(cfg.arch, true)) ckpt.set(name, t2);
      const dir = path.join(cfg.outDir, "checkpoints");
      fs.mkdirSync(dir, { recursive: true });
      writeArchive(ckpt, path.join(dir, `epoch_${epoch}.saw`));
    }
  }

  const exportPath = path.join(cfg.outDir, "toy.saw");
  exportArchive(genToY, discY, cfg.arch, exportPath);
  const final = holdoutCycleSsim(genToY, genToX, holdX, holdY, cfg.batch, cfg.ssim);
  console.log(
    `done: exported ${exportPath}; holdout cycle-SSIM ` +
      `${initial.mean.toFixed(4)} -> ${final.mean.toFixed(4)}`,
  );
  return {
    exportPath,
    lossCsv,
    metricsCsv,
    initialCycleSsim: initial.mean,
    finalCycleSsim: final.mean,
  };
}

function fmt(v: number): string {
  return v.toPrecision(10);
}

function range(n: number): number[] {
  return Array.from({ length: n }, (_, i) => i);
}

function shuffled(rng: SplitMix64, n: number): number[] {
  const idx = range(n);
  rng.shuffle(idx);
  return idx;
}

function sampleIndices(rng: SplitMix64, n: number, count: number): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i++) out.push(rng.int(n));
  return out;
}

function batchFrom(images: Float64Array[], indices: number[], side: number): Tensor {
  const n = side * side;
  const out = Tensor.zeros([indices.length, 3, side, side]);
  for (let i = 0; i < indices.length; i++) out.data.set(images[indices[i]], i * 3 * n);
  return out;
}

/** Identity pretraining alone (the designated near-identity checkpoint). */
export function identityPretrain(
  dataDirs: string[], steps: number, seed: number, arch: Arch, outPath: string,
  lr = 2e-4, batch = 8,
): Generator {
  const rng = new SplitMix64(seed);
  const domain = new Domain(dataDirs);
  const gen = Generator.build("gen", arch, rng);
  const sn = new SpectralProjector(gen.store, "gen");
  sn.project(10);
  const adam = new Adam(gen.store.trainable("gen"));
  for (let step = 0; step < steps; step++) {
    const idx = sampleIndices(rng, domain.images.length, batch);
    const b = domain.batch(idx);
    startTape();
    const out = gen.forward(b, true);
    const loss = addScalars([{ t: cycleLoss(b, out, b, out), w: 0.5 }]);
    adam.zeroGrads();
    backward(loss);
    zeroMuGrads(gen.store, "gen");
    adam.step(lr);
    sn.project();
    if ((step + 1) % 50 === 0) {
      console.log(`identity ${step + 1}/${steps}: L1 ${loss.item().toFixed(5)}`);
    }
  }
  exportArchive(gen, null, arch, outPath);
  console.log(`identity checkpoint -> ${outPath}`);
  return gen;
}

/** Rebuild a generator from an exported archive (weights + running stats). */
export function generatorFromArchive(path2: string): Generator {
  const tensors = readArchive(path2);
  const arch = archFromTensors(tensors);
  const gen = Generator.build("gen", arch, new SplitMix64(0));
  loadNetworkTensors(gen.store, tensors, "gen");
  return gen;
}

function archFromTensors(tensors: TensorMap): Arch {
  const { archFromMeta } = require("./weights") as typeof import("./weights");
  return archFromMeta(tensors);
}
