import './stdout_guard.js'

import { readFile } from 'node:fs/promises'
import process from 'node:process'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { readConfig, serve } from './adapter.js'
import { DEFAULT_FEATURE_OPTIONS, extractFeatures, readManifest } from './features.js'
import { buildModel, saveWeights } from './model.js'

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .scriptName('scriptorium-adapter')
    .command(
      'serve',
      'speak the detector wire protocol on stdin/stdout',
      y => y.option('config', { type: 'string', demandOption: true,
                               describe: 'adapter config JSON' }),
      async argv => {
        await serve(await readConfig(argv.config))
        process.exit(0) // readline on stdin would otherwise keep the loop alive
      },
    )
    .command(
      'init-weights',
      'create a fresh base checkpoint for the configured architecture',
      y => y
        .option('config', { type: 'string', demandOption: true })
        .option('out', { type: 'string', demandOption: true }),
      async argv => {
        const config = JSON.parse(await readFile(argv.config, 'utf-8'))
        const model = buildModel(
          Number(config.image_size ?? 640), config.grayscale === false ? 3 : 1,
        )
        await saveWeights(model, argv.out)
        process.stderr.write(`wrote base weights to ${argv.out}\n`)
      },
    )
    .command(
      'extract-features',
      'embed images into the JSONL feature format used by the split tool',
      y => y
        .option('images', { type: 'string', demandOption: true,
                            describe: 'image manifest JSON (id + file_name)' })
        .option('out', { type: 'string', demandOption: true })
        .option('root', { type: 'string', describe: 'prefix for image paths' })
        .option('dim', { type: 'number', default: DEFAULT_FEATURE_OPTIONS.dim })
        .option('size', { type: 'number', default: DEFAULT_FEATURE_OPTIONS.size })
        .option('seed', { type: 'number', default: DEFAULT_FEATURE_OPTIONS.seed })
        .option('backbone-weights', { type: 'string',
                                      describe: 'adapter weights file to embed with' }),
      async argv => {
        const records = readManifest(await readFile(argv.images, 'utf-8'))
        const { written, skipped } = await extractFeatures(records, argv.out, {
          dim: argv.dim,
          size: argv.size,
          seed: argv.seed,
          root: argv.root,
          backboneWeights: argv['backbone-weights'],
        })
        process.stderr.write(`wrote ${written} records, skipped ${skipped}\n`)
        if (skipped > 0) process.exitCode = 1
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      process.stderr.write(`${msg ?? err?.message}\n`)
      process.exit(err ? 1 : 2)
    })
    .parseAsync()
}

main().catch(err => {
  process.stderr.write(`fatal: ${err instanceof Error ? err.message : err}\n`)
  process.exit(1)
})
