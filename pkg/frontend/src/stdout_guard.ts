/**
 * stdout carries the wire protocol, so console chatter (like the tfjs
 * "install the node backend" banner) must land on stderr. Import this
 * before anything that pulls in tfjs.
 */

const toStderr = (...args: unknown[]) => {
  process.stderr.write(args.map(a => (typeof a === 'string' ? a : String(a))).join(' ') + '\n')
}

console.log = toStderr
console.info = toStderr
console.warn = toStderr
