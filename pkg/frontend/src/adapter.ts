/**
 * The protocol server: bridges stdin/stdout NDJSON to the tfjs trainer.
 *
 * train fine-tunes from the base checkpoint (or from the current weights
 * when warm_start is set) on the YOLO label files the harness wrote;
 * predict emits protocol-valid detections in absolute pixels. Handler
 * errors become {ok:false,error} replies, never a silent exit.
 */

import { mkdir, readFile } from 'node:fs/promises'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'

import { loadModelInput } from './images.js'
import {
  buildModel,
  decodeDetections,
  freezeLayers,
  loadWeights,
  parseYoloLabels,
  saveWeights,
  trainModel,
  YoloLabel,
} from './model.js'
import {
  ImageEntry,
  parseRequest,
  PredictionItem,
  requestLines,
  send,
  validateDetection,
} from './protocol.js'

export interface AdapterConfig {
  base_weights: string
  epochs: number
  image_size: number
  grayscale: boolean
  learning_rate: number
  freeze_dfl: boolean
}

export function normalizeConfig(raw: Record<string, unknown>): AdapterConfig {
  const cfg: AdapterConfig = {
    base_weights: String(raw.base_weights ?? ''),
    epochs: Number(raw.epochs ?? 150),
    image_size: Number(raw.image_size ?? 640),
    grayscale: Boolean(raw.grayscale ?? true),
    learning_rate: Number(raw.learning_rate ?? 7.7e-4),
    freeze_dfl: Boolean(raw.freeze_dfl ?? true),
  }
  if (!cfg.base_weights) throw new Error('config: base_weights is required')
  if (!Number.isInteger(cfg.epochs) || cfg.epochs < 1) {
    throw new Error(`config: epochs must be an integer >= 1, got ${cfg.epochs}`)
  }
  if (cfg.image_size % 32 !== 0) {
    throw new Error(`config: image_size must be a multiple of 32, got ${cfg.image_size}`)
  }
  if (!(cfg.learning_rate > 0)) {
    throw new Error(`config: learning_rate must be > 0, got ${cfg.learning_rate}`)
  }
  return cfg
}

export async function readConfig(configPath: string): Promise<AdapterConfig> {
  const cfg = normalizeConfig(JSON.parse(await readFile(configPath, 'utf-8')))
  if (!path.isAbsolute(cfg.base_weights)) {
    // relative checkpoint paths anchor at the config file, not the cwd
    cfg.base_weights = path.resolve(path.dirname(configPath), cfg.base_weights)
  }
  return cfg
}

const stem = (file: string) => path.basename(file, path.extname(file))

export class Adapter {
  private model: tf.LayersModel
  private readonly channels: 1 | 3

  constructor(private readonly config: AdapterConfig) {
    this.channels = config.grayscale ? 1 : 3
    this.model = buildModel(config.image_size, this.channels)
  }

  async loadBase(): Promise<void> {
    await loadWeights(this.model, this.config.base_weights)
  }

  private async loadLabels(labelsDir: string, image: ImageEntry): Promise<YoloLabel[]> {
    const labelPath = path.join(labelsDir, `${stem(image.file_name)}.txt`)
    return parseYoloLabels(await readFile(labelPath, 'utf-8'))
  }

  async train(images: ImageEntry[], labelsDir: string, workdir: string,
              warmStart: boolean): Promise<void> {
    if (!warmStart) {
      // cold start: back to the base checkpoint every round
      this.model.dispose()
      this.model = buildModel(this.config.image_size, this.channels)
      await this.loadBase()
    }
    if (this.config.freeze_dfl) {
      const frozen = freezeLayers(this.model, /dfl/i)
      process.stderr.write(
        frozen.length
          ? `freeze_dfl: frozen layers ${frozen.join(', ')}\n`
          : 'freeze_dfl: no layer names matched /dfl/i in this architecture\n',
      )
    }
    const inputs: Float32Array[] = []
    const labels: YoloLabel[][] = []
    for (const image of images) {
      inputs.push(await loadModelInput(image.file_name, this.config.image_size, this.channels))
      labels.push(await this.loadLabels(labelsDir, image))
    }
    if (!inputs.length) throw new Error('train: empty image list')
    const loss = await trainModel(
      this.model, inputs, labels, this.config.image_size,
      this.config.epochs, this.config.learning_rate, this.channels,
    )
    process.stderr.write(`trained on ${inputs.length} images, final loss ${loss.toFixed(4)}\n`)
    await mkdir(workdir, { recursive: true })
    await saveWeights(this.model, path.join(workdir, 'adapter-weights.json'))
  }

  async predict(images: ImageEntry[]): Promise<PredictionItem[]> {
    const items: PredictionItem[] = []
    for (const image of images) {
      const pixels = await loadModelInput(
        image.file_name, this.config.image_size, this.channels,
      )
      const x = tf.tensor4d(
        pixels, [1, this.config.image_size, this.config.image_size, this.channels],
      )
      const out = this.model.apply(x) as tf.Tensor4D
      const detections = decodeDetections(
        out, image.width, image.height, this.config.image_size,
      )
      x.dispose()
      out.dispose()
      detections.forEach(validateDetection)
      items.push({ image_id: image.id, detections })
    }
    return items
  }
}

export async function serve(
  config: AdapterConfig,
  input: NodeJS.ReadableStream = process.stdin,
  output: NodeJS.WritableStream = process.stdout,
): Promise<void> {
  const adapter = new Adapter(config)
  await adapter.loadBase() // fail fast on a bad checkpoint, before any request

  for await (const line of requestLines(input)) {
    if (!line.trim()) continue
    try {
      const request = parseRequest(line)
      switch (request.cmd) {
        case 'hello':
          send({ ok: true, batch: true }, output)
          break
        case 'train':
          await adapter.train(
            request.images, request.labels_dir, request.workdir, request.warm_start,
          )
          send({ ok: true, cmd: 'trained' }, output)
          break
        case 'predict':
          send({ ok: true, cmd: 'predictions', items: await adapter.predict(request.images) },
               output)
          break
        case 'shutdown':
          return
      }
    } catch (err) {
      send({ ok: false, error: err instanceof Error ? err.message : String(err) }, output)
    }
  }
}
