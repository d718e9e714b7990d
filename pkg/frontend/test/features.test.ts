import { mkdtemp, readFile } from 'node:fs/promises'
import { tmpdir } from 'node:os'
import * as path from 'node:path'
import { fileURLToPath } from 'node:url'
import { describe, expect, it } from 'vitest'

import { extractFeatures, readManifest } from '../src/features.js'

const fixtures = path.join(path.dirname(fileURLToPath(import.meta.url)), '..', 'fixtures')

async function run(records: { id: number; file_name: string }[]) {
  const dir = await mkdtemp(path.join(tmpdir(), 'feats-'))
  const out = path.join(dir, 'feats.jsonl')
  const counts = await extractFeatures(records, out, {
    dim: 32, size: 32, seed: 7, root: path.join(fixtures, 'images'),
  })
  const lines = (await readFile(out, 'utf-8')).trim().split('\n').filter(Boolean)
  return { counts, lines }
}

describe('extractFeatures', () => {
  const records = [
    { id: 1, file_name: 'page-a.png' },
    { id: 2, file_name: 'page-b.png' },
    { id: 3, file_name: 'page-c.png' },
  ]

  it('writes one record per image with a common dimension', async () => {
    const { counts, lines } = await run(records)
    expect(counts).toEqual({ written: 3, skipped: 0 })
    expect(lines).toHaveLength(3)
    const parsed = lines.map(l => JSON.parse(l))
    expect(parsed.map(p => p.image_id)).toEqual([1, 2, 3])
    const dims = new Set(parsed.map(p => p.vector.length))
    expect(dims).toEqual(new Set([32]))
  })

  it('is deterministic and unit-norm', async () => {
    const a = await run(records)
    const b = await run(records)
    expect(a.lines).toEqual(b.lines)
    for (const line of a.lines) {
      const { vector } = JSON.parse(line)
      const norm = Math.sqrt(vector.reduce((s: number, v: number) => s + v * v, 0))
      expect(norm).toBeCloseTo(1, 6)
    }
  })

  it('distinguishes different pages', async () => {
    const { lines } = await run(records)
    const [a, b] = lines.map(l => JSON.parse(l).vector as number[])
    const dot = a.reduce((s, v, i) => s + v * b[i], 0)
    expect(Math.abs(dot)).toBeLessThan(0.999999) // not the same direction
  })

  it('skips unreadable images and counts them', async () => {
    const { counts, lines } = await run([
      ...records, { id: 4, file_name: 'missing.png' },
    ])
    expect(counts).toEqual({ written: 3, skipped: 1 })
    expect(lines).toHaveLength(3)
  })

  it('reads both bare-array and wrapped manifests', () => {
    const bare = readManifest('[{"id": 1, "file_name": "x.png"}]')
    const wrapped = readManifest('{"images": [{"id": 1, "file_name": "x.png"}]}')
    expect(bare).toEqual(wrapped)
    expect(() => readManifest('{"images": 3}')).toThrow(/manifest/)
  })
})
