/**
 * NDJSON wire protocol shared with the experiment harness.
 *
 * One JSON object per line on stdin/stdout. Requests: hello, train,
 * predict, shutdown. Replies: {ok:true,batch}, {ok:true,cmd:"trained"},
 * {ok:true,cmd:"predictions",items} or {ok:false,error}. Detection boxes
 * travel as absolute-pixel [x, y, w, h]; label files stay YOLO-normalized.
 */

import * as readline from 'node:readline'

export const CATEGORY_COUNT = 9

export interface ImageEntry {
  id: number
  file_name: string
  width: number
  height: number
}

export interface WireDetection {
  category_id: number
  bbox: [number, number, number, number]
  score: number
}

export interface PredictionItem {
  image_id: number
  detections: WireDetection[]
}

export type Request =
  | { cmd: 'hello' }
  | { cmd: 'train'; images: ImageEntry[]; labels_dir: string; workdir: string; warm_start: boolean }
  | { cmd: 'predict'; images: ImageEntry[] }
  | { cmd: 'shutdown' }

export type Reply =
  | { ok: true; batch: boolean }
  | { ok: true; cmd: 'trained' }
  | { ok: true; cmd: 'predictions'; items: PredictionItem[] }
  | { ok: false; error: string }

export class ProtocolError extends Error {}

function requireImages(value: unknown, where: string): ImageEntry[] {
  if (!Array.isArray(value)) throw new ProtocolError(`${where}: images must be a list`)
  for (const entry of value) {
    if (typeof entry !== 'object' || entry === null) {
      throw new ProtocolError(`${where}: image entry is not an object`)
    }
    const e = entry as Record<string, unknown>
    if (typeof e.id !== 'number' || typeof e.file_name !== 'string' ||
        typeof e.width !== 'number' || typeof e.height !== 'number') {
      throw new ProtocolError(`${where}: bad image entry ${JSON.stringify(entry)}`)
    }
  }
  return value as ImageEntry[]
}

export function parseRequest(line: string): Request {
  let msg: unknown
  try {
    msg = JSON.parse(line)
  } catch {
    throw new ProtocolError(`not a JSON line: ${line.slice(0, 120)}`)
  }
  if (typeof msg !== 'object' || msg === null || Array.isArray(msg)) {
    throw new ProtocolError('message must be a JSON object')
  }
  const m = msg as Record<string, unknown>
  switch (m.cmd) {
    case 'hello':
    case 'shutdown':
      return { cmd: m.cmd }
    case 'train':
      if (typeof m.labels_dir !== 'string' || typeof m.workdir !== 'string' ||
          typeof m.warm_start !== 'boolean') {
        throw new ProtocolError(`train: missing fields in ${line.slice(0, 200)}`)
      }
      return {
        cmd: 'train',
        images: requireImages(m.images, 'train'),
        labels_dir: m.labels_dir,
        workdir: m.workdir,
        warm_start: m.warm_start,
      }
    case 'predict':
      return { cmd: 'predict', images: requireImages(m.images, 'predict') }
    default:
      throw new ProtocolError(`unknown request cmd ${JSON.stringify(m.cmd)}`)
  }
}

/** Throws unless the detection is protocol-legal (score, class, geometry). */
export function validateDetection(det: WireDetection): void {
  if (!Number.isInteger(det.category_id) ||
      det.category_id < 0 || det.category_id >= CATEGORY_COUNT) {
    throw new ProtocolError(`unknown category in ${JSON.stringify(det)}`)
  }
  if (!Number.isFinite(det.score) || det.score < 0 || det.score > 1) {
    throw new ProtocolError(`score outside [0, 1] in ${JSON.stringify(det)}`)
  }
  if (det.bbox.length !== 4 || det.bbox.some(v => !Number.isFinite(v)) ||
      det.bbox[2] <= 0 || det.bbox[3] <= 0) {
    throw new ProtocolError(`bad bbox in ${JSON.stringify(det)}`)
  }
}

export function send(reply: Reply, out: NodeJS.WritableStream = process.stdout): void {
  out.write(JSON.stringify(reply) + '\n')
}

export function requestLines(
  input: NodeJS.ReadableStream = process.stdin,
): AsyncIterable<string> {
  return readline.createInterface({ input, crlfDelay: Infinity })
}
