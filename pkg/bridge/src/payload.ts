/**
 * Binary payload codecs for the bridge protocol.
 *
 * Maps and images travel as base64 of row-major little-endian float32;
 * binary masks travel as base64 of single bytes (0/1).
 */

export function encodeF32(values: Float32Array): string {
  const bytes = new Uint8Array(values.length * 4);
  const view = new DataView(bytes.buffer);
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(i * 4, values[i], true);
  }
  return Buffer.from(bytes).toString('base64');
}

export function decodeF32(payload: string, expected: number): Float32Array {
  const bytes = Buffer.from(payload, 'base64');
  if (bytes.length !== expected * 4) {
    throw new PayloadError(`expected ${expected * 4} bytes of f32 data, got ${bytes.length}`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.length);
  const out = new Float32Array(expected);
  for (let i = 0; i < expected; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

export function encodeMask(values: Uint8Array): string {
  return Buffer.from(values).toString('base64');
}

export function decodeMask(payload: string, expected: number): Uint8Array {
  const bytes = Buffer.from(payload, 'base64');
  if (bytes.length !== expected) {
    throw new PayloadError(`expected ${expected} mask bytes, got ${bytes.length}`);
  }
  return new Uint8Array(bytes);
}

export class PayloadError extends Error {}
