/**
 * Bridge server entry point: serves one stub model over stdio or TCP.
 *
 * Usage:
 *   node dist/server.js --stdio --model disk [--radius 5] [--sharpness 2]
 *   node dist/server.js --port 8765 --config server.json
 *
 * A config file may name the model kind, checkpoint path, device, and disk
 * radius; the stub models ship no weights, so checkpoint/device are accepted
 * and ignored. Flags override config fields. Each connection gets its own
 * session; requests within a connection are answered strictly in order.
 * Logs go to stderr so stdout stays clean for frames in stdio mode.
 */

import fs from 'node:fs';
import net from 'node:net';
import process from 'node:process';

import { createModel, type DiskModelOptions } from './models.js';
import { createLineParser, encodeLine, errorFrame } from './protocol.js';
import { SessionHandler } from './session.js';

interface ServerArgs {
  stdio: boolean;
  port: number | null;
  model: string;
  options: DiskModelOptions;
}

interface ServerConfigFile {
  model?: string;
  checkpoint?: string | null; // unused by the stub models
  device?: string;            // unused by the stub models
  radius?: number;
  sharpness?: number;
  weight?: number;
  bias?: number;
}

export function parseArgs(argv: string[]): ServerArgs {
  const args: ServerArgs = { stdio: false, port: null, model: 'disk', options: {} };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[i];
    };
    switch (flag) {
      case '--stdio':
        args.stdio = true;
        break;
      case '--port':
        args.port = Number(next());
        break;
      case '--config': {
        const config = JSON.parse(fs.readFileSync(next(), 'utf8')) as ServerConfigFile;
        if (config.model) args.model = config.model;
        if (config.radius !== undefined) args.options.radius = config.radius;
        if (config.sharpness !== undefined) args.options.sharpness = config.sharpness;
        if (config.weight !== undefined) args.options.weight = config.weight;
        if (config.bias !== undefined) args.options.bias = config.bias;
        break;
      }
      case '--model':
        args.model = next();
        break;
      case '--radius':
        args.options.radius = Number(next());
        break;
      case '--sharpness':
        args.options.sharpness = Number(next());
        break;
      case '--weight':
        args.options.weight = Number(next());
        break;
      case '--bias':
        args.options.bias = Number(next());
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.stdio && args.port === null) {
    throw new Error('need --stdio or --port');
  }
  return args;
}

function attach(
  input: NodeJS.ReadableStream,
  write: (line: string) => void,
  modelKind: string,
  options: DiskModelOptions,
) {
  const handler = new SessionHandler(createModel(modelKind, options));
  const parser = createLineParser(
    (frame) => write(encodeLine(handler.handle(frame))),
    () => write(encodeLine(errorFrame('bad_frame', 'unparseable JSON line'))),
  );
  input.setEncoding('utf8');
  input.on('data', (chunk: string) => parser.push(chunk));
}

export function main(argv = process.argv.slice(2)): void {
  let args: ServerArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }

  if (args.stdio) {
    attach(process.stdin, (line) => process.stdout.write(line), args.model, args.options);
    process.stdin.on('end', () => process.exit(0));
    return;
  }

  const server = net.createServer((socket) => {
    attach(socket, (line) => socket.write(line), args.model, args.options);
    socket.on('error', () => socket.destroy());
  });
  server.listen(args.port, () => {
    const addr = server.address();
    const port = addr && typeof addr === 'object' ? addr.port : args.port;
    process.stderr.write(`bridge server (${args.model}) listening on ${port}\n`);
  });
}

main();
