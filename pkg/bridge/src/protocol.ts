/**
 * Frame types for the newline-delimited JSON wire protocol.
 *
 * Every request frame receives exactly one response frame, in order:
 *   init    -> ready | error
 *   predict -> prediction | error
 *   grad    -> gradient | error
 */

export interface ClickFrame {
  x: number;
  y: number;
  sign: 1 | -1;
}

export interface InitFrame {
  type: 'init';
  height: number;
  width: number;
  image: string; // b64 f32, H*W*3
}

export interface PredictFrame {
  type: 'predict';
  clicks: ClickFrame[];
  prev_mask: string | null;
}

export interface GradFrame {
  type: 'grad';
  clicks: ClickFrame[];
  gt: string; // b64 u8, H*W
  direction: 'min' | 'max';
  active: number;
}

export type RequestFrame = InitFrame | PredictFrame | GradFrame;

export interface ReadyFrame {
  type: 'ready';
  input_mode: 'disk_maps' | 'raw_coordinates';
  supports_gradients: boolean;
  native_resolution: number | null;
}

export interface PredictionFrame {
  type: 'prediction';
  map: string;
}

export interface GradientFrame {
  type: 'gradient';
  dxy: [number, number];
}

export interface ErrorFrame {
  type: 'error';
  code: string;
  message: string;
}

export type ResponseFrame = ReadyFrame | PredictionFrame | GradientFrame | ErrorFrame;

export function errorFrame(code: string, message: string): ErrorFrame {
  return { type: 'error', code, message };
}

export function encodeLine(frame: ResponseFrame | RequestFrame): string {
  return `${JSON.stringify(frame)}\n`;
}

/** Incremental NDJSON splitter; malformed lines surface via onError. */
export function createLineParser(
  onFrame: (frame: unknown) => void,
  onError: (line: string) => void,
) {
  let buffer = '';
  return {
    push(chunk: string) {
      buffer += chunk;
      for (;;) {
        const idx = buffer.indexOf('\n');
        if (idx === -1) break;
        const line = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 1);
        if (!line.trim()) continue;
        try {
          onFrame(JSON.parse(line));
        } catch {
          onError(line);
        }
      }
    },
  };
}

export function isClickList(value: unknown): value is ClickFrame[] {
  return Array.isArray(value) && value.every(
    (c) => typeof c === 'object' && c !== null
      && typeof (c as ClickFrame).x === 'number'
      && typeof (c as ClickFrame).y === 'number'
      && ((c as ClickFrame).sign === 1 || (c as ClickFrame).sign === -1),
  );
}
