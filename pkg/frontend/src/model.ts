/**
 * A miniature single-stage detector trained with tfjs.
 *
 * Grid head over a small conv backbone: each cell of the G x G grid
 * (stride 8) predicts objectness, a box (center offset within the cell,
 * size as a fraction of the image) and class logits. This is a stand-in
 * trainer for protocol and pipeline work, not a production detector; real
 * checkpoints can be dropped in through the same weights file format.
 */

import { readFile, writeFile } from 'node:fs/promises'
import * as tf from '@tensorflow/tfjs'

import { CATEGORY_COUNT, WireDetection } from './protocol.js'

export const STRIDE = 8

export interface YoloLabel {
  category: number
  cx: number
  cy: number
  w: number
  h: number
}

export function parseYoloLabels(text: string): YoloLabel[] {
  const labels: YoloLabel[] = []
  for (const raw of text.split('\n')) {
    const line = raw.trim()
    if (!line) continue
    const parts = line.split(/\s+/)
    if (parts.length !== 5) throw new Error(`bad label line: ${line}`)
    const [category, cx, cy, w, h] = parts.map(Number)
    if (!Number.isInteger(category) || [cx, cy, w, h].some(v => !Number.isFinite(v))) {
      throw new Error(`bad label line: ${line}`)
    }
    labels.push({ category, cx, cy, w, h })
  }
  return labels
}

export function buildModel(imageSize: number, channels = 1, seed = 1337): tf.LayersModel {
  if (imageSize % 32 !== 0) throw new Error(`image_size ${imageSize} not a multiple of 32`)
  const init = (s: number) => tf.initializers.glorotUniform({ seed: seed + s })
  const input = tf.input({ shape: [imageSize, imageSize, channels] })
  let x = tf.layers
    .conv2d({
      filters: 8, kernelSize: 3, strides: 2, padding: 'same', activation: 'relu',
      kernelInitializer: init(0), name: 'stem_conv',
    })
    .apply(input) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({
      filters: 16, kernelSize: 3, strides: 2, padding: 'same', activation: 'relu',
      kernelInitializer: init(1), name: 'mid_conv',
    })
    .apply(x) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({
      filters: 32, kernelSize: 3, strides: 2, padding: 'same', activation: 'relu',
      kernelInitializer: init(2), name: 'deep_conv',
    })
    .apply(x) as tf.SymbolicTensor
  const head = tf.layers
    .conv2d({
      filters: 5 + CATEGORY_COUNT, kernelSize: 1, padding: 'same',
      kernelInitializer: init(3), name: 'head_conv',
    })
    .apply(x) as tf.SymbolicTensor
  return tf.model({ inputs: input, outputs: head })
}

/** Grid targets for one image: [G, G, 5 + classes]. */
export function encodeTargets(labels: YoloLabel[], imageSize: number): tf.Tensor3D {
  const grid = imageSize / STRIDE
  const data = new Float32Array(grid * grid * (5 + CATEGORY_COUNT))
  const at = (gy: number, gx: number, c: number) =>
    (gy * grid + gx) * (5 + CATEGORY_COUNT) + c
  for (const label of labels) {
    const gx = Math.min(grid - 1, Math.floor(label.cx * grid))
    const gy = Math.min(grid - 1, Math.floor(label.cy * grid))
    data[at(gy, gx, 0)] = 1
    data[at(gy, gx, 1)] = label.cx * grid - gx
    data[at(gy, gx, 2)] = label.cy * grid - gy
    data[at(gy, gx, 3)] = label.w
    data[at(gy, gx, 4)] = label.h
    data[at(gy, gx, 5 + label.category)] = 1
  }
  return tf.tensor3d(data, [grid, grid, 5 + CATEGORY_COUNT])
}

function detectionLoss(pred: tf.Tensor4D, target: tf.Tensor4D): tf.Scalar {
  return tf.tidy(() => {
    const objTarget = target.slice([0, 0, 0, 0], [-1, -1, -1, 1])
    const boxTarget = target.slice([0, 0, 0, 1], [-1, -1, -1, 4])
    const clsTarget = target.slice([0, 0, 0, 5], [-1, -1, -1, CATEGORY_COUNT])
    const objLogit = pred.slice([0, 0, 0, 0], [-1, -1, -1, 1])
    const boxLogit = pred.slice([0, 0, 0, 1], [-1, -1, -1, 4])
    const clsLogit = pred.slice([0, 0, 0, 5], [-1, -1, -1, CATEGORY_COUNT])

    const objLoss = tf.losses.sigmoidCrossEntropy(objTarget, objLogit)
    const boxLoss = tf.losses.meanSquaredError(
      boxTarget, tf.sigmoid(boxLogit), objTarget,
    )
    const clsLoss = tf.losses.softmaxCrossEntropy(
      clsTarget.reshape([-1, CATEGORY_COUNT]),
      clsLogit.reshape([-1, CATEGORY_COUNT]),
      objTarget.reshape([-1, 1]),
    )
    return objLoss.add(boxLoss).add(clsLoss) as tf.Scalar
  })
}

export interface TrainStats {
  epochs: number
  finalLoss: number
  frozenLayers: string[]
}

/** Set matching layers untrainable; returns the layer names that matched. */
export function freezeLayers(model: tf.LayersModel, pattern: RegExp): string[] {
  const frozen: string[] = []
  for (const layer of model.layers) {
    if (pattern.test(layer.name)) {
      layer.trainable = false
      frozen.push(layer.name)
    }
  }
  return frozen
}

export async function trainModel(
  model: tf.LayersModel,
  inputs: Float32Array[],
  labels: YoloLabel[][],
  imageSize: number,
  epochs: number,
  learningRate: number,
  channels = 1,
): Promise<number> {
  const x = tf.tensor4d(
    concatFloat(inputs), [inputs.length, imageSize, imageSize, channels],
  )
  const y = tf.stack(labels.map(l => encodeTargets(l, imageSize))) as tf.Tensor4D
  // frozen layers opt out via layer.trainable, which propagates to the
  // underlying variables and is honored by minimize()
  const optimizer = tf.train.adam(learningRate)
  let finalLoss = NaN
  try {
    for (let epoch = 0; epoch < epochs; epoch++) {
      const loss = optimizer.minimize(
        () => detectionLoss(model.apply(x) as tf.Tensor4D, y),
        true,
      ) as tf.Scalar
      finalLoss = (await loss.data())[0]
      loss.dispose()
    }
  } finally {
    x.dispose()
    y.dispose()
    optimizer.dispose()
  }
  if (!Number.isFinite(finalLoss)) throw new Error(`training diverged (loss ${finalLoss})`)
  return finalLoss
}

export function decodeDetections(
  output: tf.Tensor4D,
  originalWidth: number,
  originalHeight: number,
  imageSize: number,
  minScore = 0.05,
  maxDetections = 64,
): WireDetection[] {
  const grid = imageSize / STRIDE
  const raw = output.dataSync()
  const channels = 5 + CATEGORY_COUNT
  const sigmoid = (v: number) => 1 / (1 + Math.exp(-v))
  const found: WireDetection[] = []
  for (let gy = 0; gy < grid; gy++) {
    for (let gx = 0; gx < grid; gx++) {
      const base = (gy * grid + gx) * channels
      const score = sigmoid(raw[base])
      if (score < minScore) continue
      let best = 0
      for (let c = 1; c < CATEGORY_COUNT; c++) {
        if (raw[base + 5 + c] > raw[base + 5 + best]) best = c
      }
      const cx = ((gx + sigmoid(raw[base + 1])) / grid) * originalWidth
      const cy = ((gy + sigmoid(raw[base + 2])) / grid) * originalHeight
      const w = Math.max(1, sigmoid(raw[base + 3]) * originalWidth)
      const h = Math.max(1, sigmoid(raw[base + 4]) * originalHeight)
      const x = Math.min(Math.max(cx - w / 2, 0), originalWidth - 1)
      const y = Math.min(Math.max(cy - h / 2, 0), originalHeight - 1)
      found.push({
        category_id: best,
        bbox: [x, y, Math.min(w, originalWidth - x), Math.min(h, originalHeight - y)],
        score: Math.min(1, Math.max(0, score)),
      })
    }
  }
  found.sort((a, b) => b.score - a.score)
  return found.slice(0, maxDetections)
}

function concatFloat(arrays: Float32Array[]): Float32Array {
  const total = arrays.reduce((n, a) => n + a.length, 0)
  const out = new Float32Array(total)
  let offset = 0
  for (const a of arrays) {
    out.set(a, offset)
    offset += a.length
  }
  return out
}

// Weights file: JSON with base64 float32 payloads, one entry per weight
// tensor in model order. Plain tfjs in Node has no file:// IO handler, so
// this stands in for model.save().

export async function saveWeights(model: tf.LayersModel, path: string): Promise<void> {
  const weights = model.getWeights()
  const entries = await Promise.all(
    weights.map(async w => ({
      shape: w.shape,
      data: Buffer.from(new Float32Array(await w.data()).buffer).toString('base64'),
    })),
  )
  await writeFile(path, JSON.stringify({ format: 'adapter-weights-v1', entries }))
}

export async function loadWeights(model: tf.LayersModel, path: string): Promise<void> {
  const doc = JSON.parse(await readFile(path, 'utf-8'))
  if (doc.format !== 'adapter-weights-v1') {
    throw new Error(`${path}: not an adapter weights file`)
  }
  const tensors = doc.entries.map((e: { shape: number[]; data: string }) => {
    const buf = Buffer.from(e.data, 'base64')
    return tf.tensor(
      new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4), e.shape,
    )
  })
  model.setWeights(tensors)
  tensors.forEach((t: tf.Tensor) => t.dispose())
}
