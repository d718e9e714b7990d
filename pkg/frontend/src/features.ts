/**
 * Per-image embeddings for the stratified split, written as JSON Lines.
 *
 * Offline-friendly: a fixed seeded random projection of the downscaled
 * grayscale image. Deterministic across runs and platforms, nonzero norm
 * for any non-constant image; swap in a real backbone by pointing
 * `backbone_weights` at an adapter weights file to use its deepest conv
 * features instead.
 */

import { appendFile, readFile, writeFile } from 'node:fs/promises'
import * as tf from '@tensorflow/tfjs'

import { loadModelInput } from './images.js'
import { buildModel, loadWeights } from './model.js'

export interface FeatureOptions {
  dim: number
  size: number
  seed: number
  root?: string
  backboneWeights?: string
  backboneImageSize?: number
}

export const DEFAULT_FEATURE_OPTIONS: FeatureOptions = {
  dim: 128,
  size: 64,
  seed: 1234,
}

export interface ManifestRecord {
  id: number
  file_name: string
}

export function readManifest(text: string): ManifestRecord[] {
  const data = JSON.parse(text)
  const records = Array.isArray(data) ? data : data.images
  if (!Array.isArray(records)) throw new Error('manifest must be a JSON array of image records')
  return records.map((r: Record<string, unknown>) => {
    if (typeof r.id !== 'number' || typeof r.file_name !== 'string') {
      throw new Error(`bad manifest record ${JSON.stringify(r)}`)
    }
    return { id: r.id, file_name: r.file_name }
  })
}

/** mulberry32: tiny seeded PRNG, stable across platforms. */
function rng(seed: number): () => number {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let t = state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function projectionMatrix(dim: number, inputLen: number, seed: number): Float32Array {
  const next = rng(seed)
  const matrix = new Float32Array(dim * inputLen)
  for (let i = 0; i < matrix.length; i++) matrix[i] = next() * 2 - 1
  return matrix
}

function project(pixels: Float32Array, matrix: Float32Array, dim: number): number[] {
  const n = pixels.length
  const out = new Array<number>(dim)
  let norm = 0
  for (let d = 0; d < dim; d++) {
    let acc = 0
    const row = d * n
    for (let i = 0; i < n; i++) acc += matrix[row + i] * pixels[i]
    out[d] = acc
    norm += acc * acc
  }
  norm = Math.sqrt(norm)
  if (norm === 0) throw new Error('zero-norm embedding (constant image)')
  return out.map(v => v / norm)
}

async function backboneEmbedder(opts: FeatureOptions) {
  const size = opts.backboneImageSize ?? 64
  const model = buildModel(size, 1)
  await loadWeights(model, opts.backboneWeights!)
  // deepest conv activations, average-pooled over the grid
  const deep = tf.model({
    inputs: model.inputs,
    outputs: model.getLayer('deep_conv').output as tf.SymbolicTensor,
  })
  return async (path: string) => {
    const pixels = await loadModelInput(path, size, 1)
    const vec = tf.tidy(() => {
      const x = tf.tensor4d(pixels, [1, size, size, 1])
      const pooled = tf.mean(deep.apply(x) as tf.Tensor4D, [1, 2])
      return Array.from(pooled.dataSync())
    })
    const norm = Math.sqrt(vec.reduce((s, v) => s + v * v, 0))
    if (norm === 0) throw new Error('zero-norm embedding (constant image)')
    return vec.map(v => v / norm)
  }
}

export async function extractFeatures(
  records: ManifestRecord[],
  outPath: string,
  opts: FeatureOptions = DEFAULT_FEATURE_OPTIONS,
): Promise<{ written: number; skipped: number }> {
  let embed: (path: string) => Promise<number[]>
  if (opts.backboneWeights) {
    embed = await backboneEmbedder(opts)
  } else {
    const matrix = projectionMatrix(opts.dim, opts.size * opts.size, opts.seed)
    embed = async (path: string) => {
      const pixels = await loadModelInput(path, opts.size, 1)
      return project(pixels, matrix, opts.dim)
    }
  }

  await writeFile(outPath, '')
  let written = 0
  let skipped = 0
  for (const record of records) {
    const path = opts.root ? `${opts.root.replace(/\/$/, '')}/${record.file_name}` : record.file_name
    try {
      const vector = await embed(path)
      await appendFile(
        outPath, JSON.stringify({ image_id: record.id, vector }) + '\n',
      )
      written++
    } catch (err) {
      skipped++
      process.stderr.write(
        `skipping ${path}: ${err instanceof Error ? err.message : err}\n`,
      )
    }
  }
  return { written, skipped }
}
