/** End-to-end smoke: spawn the built CLI and drive the wire protocol. */

import { spawn, ChildProcess } from 'node:child_process'
import { mkdtemp } from 'node:fs/promises'
import { tmpdir } from 'node:os'
import * as path from 'node:path'
import * as readline from 'node:readline'
import { fileURLToPath } from 'node:url'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { validateDetection, WireDetection } from '../src/protocol.js'

const root = path.join(path.dirname(fileURLToPath(import.meta.url)), '..')
const fixtures = path.join(root, 'fixtures')

const images = [
  { id: 1, file_name: path.join(fixtures, 'images', 'page-a.png'), width: 96, height: 96 },
  { id: 2, file_name: path.join(fixtures, 'images', 'page-b.png'), width: 96, height: 96 },
]

class AdapterProcess {
  proc: ChildProcess
  private lines: AsyncIterator<string>

  constructor() {
    this.proc = spawn('node', [path.join(root, 'dist', 'cli.js'), 'serve',
                               '--config', path.join(fixtures, 'adapter.json')],
                      { stdio: ['pipe', 'pipe', 'pipe'] })
    const rl = readline.createInterface({ input: this.proc.stdout! })
    this.lines = rl[Symbol.asyncIterator]()
  }

  async rpc(msg: object): Promise<Record<string, unknown>> {
    this.proc.stdin!.write(JSON.stringify(msg) + '\n')
    const { value, done } = await this.lines.next()
    if (done) throw new Error('adapter closed stdout')
    return JSON.parse(value)
  }

  shutdown(): void {
    this.proc.stdin!.write('{"cmd":"shutdown"}\n')
  }
}

describe('adapter protocol smoke', () => {
  let adapter: AdapterProcess

  beforeAll(() => {
    adapter = new AdapterProcess()
  })

  afterAll(() => {
    adapter.shutdown()
    setTimeout(() => adapter.proc.kill(), 5000).unref()
  })

  it('handshakes with a batch capability', async () => {
    expect(await adapter.rpc({ cmd: 'hello' })).toEqual({ ok: true, batch: true })
  })

  it('trains one epoch on the two-image fixture', async () => {
    const workdir = await mkdtemp(path.join(tmpdir(), 'adapter-run-'))
    const reply = await adapter.rpc({
      cmd: 'train',
      images,
      labels_dir: path.join(fixtures, 'labels'),
      workdir,
      warm_start: false,
    })
    expect(reply).toEqual({ ok: true, cmd: 'trained' })
  }, 120_000)

  it('predicts protocol-valid detections for every requested image', async () => {
    const reply = await adapter.rpc({ cmd: 'predict', images })
    expect(reply.ok).toBe(true)
    expect(reply.cmd).toBe('predictions')
    const items = reply.items as { image_id: number; detections: WireDetection[] }[]
    expect(items.map(i => i.image_id).sort()).toEqual([1, 2])
    for (const item of items) {
      for (const det of item.detections) validateDetection(det)
    }
  }, 60_000)

  it('reports handler errors without dying', async () => {
    const reply = await adapter.rpc({
      cmd: 'train',
      images: [{ id: 9, file_name: '/nonexistent.png', width: 96, height: 96 }],
      labels_dir: fixtures,
      workdir: tmpdir(),
      warm_start: true,
    })
    expect(reply.ok).toBe(false)
    expect(String(reply.error)).toMatch(/nonexistent/)
    expect(await adapter.rpc({ cmd: 'hello' })).toEqual({ ok: true, batch: true })
  })
})
