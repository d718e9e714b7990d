/**
 * Image loading for the adapter: PNG decode, grayscale/RGB, square resize.
 *
 * The adapter owns preprocessing (the trainer expects fixed-size input),
 * so everything downstream works on Float32Array pixels in [0, 1].
 */

import { readFile } from 'node:fs/promises'
import pngjs from 'pngjs'

const { PNG } = pngjs

export interface PixelImage {
  width: number
  height: number
  channels: number
  /** row-major, channel-interleaved, [0, 1] */
  data: Float32Array
}

export async function loadImage(path: string, channels: 1 | 3): Promise<PixelImage> {
  const buffer = await readFile(path)
  const png = PNG.sync.read(buffer)
  const pixels = png.width * png.height
  const out = new Float32Array(pixels * channels)
  for (let i = 0; i < pixels; i++) {
    const r = png.data[i * 4]
    const g = png.data[i * 4 + 1]
    const b = png.data[i * 4 + 2]
    if (channels === 1) {
      out[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255
    } else {
      out[i * 3] = r / 255
      out[i * 3 + 1] = g / 255
      out[i * 3 + 2] = b / 255
    }
  }
  return { width: png.width, height: png.height, channels, data: out }
}

/** Nearest-neighbour resize to size x size, preserving channels. */
export function resizeSquare(img: PixelImage, size: number): Float32Array {
  const c = img.channels
  const out = new Float32Array(size * size * c)
  for (let y = 0; y < size; y++) {
    const sy = Math.min(img.height - 1, Math.floor((y * img.height) / size))
    for (let x = 0; x < size; x++) {
      const sx = Math.min(img.width - 1, Math.floor((x * img.width) / size))
      for (let k = 0; k < c; k++) {
        out[(y * size + x) * c + k] = img.data[(sy * img.width + sx) * c + k]
      }
    }
  }
  return out
}

export async function loadModelInput(
  path: string, size: number, channels: 1 | 3,
): Promise<Float32Array> {
  return resizeSquare(await loadImage(path, channels), size)
}
