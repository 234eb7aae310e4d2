/**
 * Per-connection request handling: one session per connection, strictly
 * serial requests, capabilities fixed at init.
 */

import type { BridgeModel, Session } from './models.js';
import { GradientsUnsupported } from './models.js';
import { decodeF32, decodeMask, encodeF32, PayloadError } from './payload.js';
import {
  errorFrame,
  isClickList,
  type GradFrame,
  type InitFrame,
  type PredictFrame,
  type ResponseFrame,
} from './protocol.js';

export class SessionHandler {
  private session: Session | null = null;

  constructor(private readonly model: BridgeModel) {}

  handle(frame: unknown): ResponseFrame {
    if (typeof frame !== 'object' || frame === null || typeof (frame as { type?: unknown }).type !== 'string') {
      return errorFrame('bad_frame', 'frames must be objects with a string "type"');
    }
    const type = (frame as { type: string }).type;
    try {
      switch (type) {
        case 'init':
          return this.init(frame as InitFrame);
        case 'predict':
          return this.predict(frame as PredictFrame);
        case 'grad':
          return this.grad(frame as GradFrame);
        default:
          return errorFrame('bad_frame', `unknown frame type ${type}`);
      }
    } catch (err) {
      if (err instanceof GradientsUnsupported) {
        return errorFrame('gradients_unsupported', err.message);
      }
      if (err instanceof PayloadError) {
        return errorFrame('bad_payload', err.message);
      }
      return errorFrame('model_failure', err instanceof Error ? err.message : String(err));
    }
  }

  private init(frame: InitFrame): ResponseFrame {
    const { height, width } = frame;
    if (!Number.isInteger(height) || !Number.isInteger(width) || height < 1 || width < 1) {
      return errorFrame('bad_frame', 'init needs positive integer height/width');
    }
    const image = decodeF32(frame.image, height * width * 3);
    this.session = { height, width, image };
    return {
      type: 'ready',
      input_mode: this.model.inputMode,
      supports_gradients: this.model.supportsGradients,
      native_resolution: this.model.nativeResolution,
    };
  }

  private requireSession(): Session {
    if (!this.session) {
      throw new PayloadError('no session: send init first');
    }
    return this.session;
  }

  private predict(frame: PredictFrame): ResponseFrame {
    const session = this.requireSession();
    if (!isClickList(frame.clicks)) {
      return errorFrame('bad_frame', 'predict needs a click list');
    }
    if (frame.clicks.length === 0) {
      return errorFrame('empty_clicks', 'predict needs at least one click');
    }
    const n = session.height * session.width;
    const prev = frame.prev_mask == null ? null : decodeF32(frame.prev_mask, n);
    const probs = this.model.predict(session, frame.clicks, prev);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = Math.min(1, Math.max(0, probs[i]));
    }
    return { type: 'prediction', map: encodeF32(out) };
  }

  private grad(frame: GradFrame): ResponseFrame {
    const session = this.requireSession();
    if (!this.model.supportsGradients) {
      return errorFrame('gradients_unsupported', 'model declared supports_gradients=false');
    }
    if (!isClickList(frame.clicks) || frame.clicks.length === 0) {
      return errorFrame('bad_frame', 'grad needs a nonempty click list');
    }
    if (frame.direction !== 'min' && frame.direction !== 'max') {
      return errorFrame('bad_frame', `direction must be min|max, got ${String(frame.direction)}`);
    }
    if (!Number.isInteger(frame.active) || frame.active < 0 || frame.active >= frame.clicks.length) {
      return errorFrame('bad_frame', `active click index ${String(frame.active)} out of range`);
    }
    const gt = decodeMask(frame.gt, session.height * session.width);
    const [gx, gy] = this.model.gradient(session, frame.clicks, gt, frame.direction, frame.active);
    if (!Number.isFinite(gx) || !Number.isFinite(gy)) {
      return errorFrame('nonfinite_gradient', `gradient was (${gx}, ${gy})`);
    }
    return { type: 'gradient', dxy: [gx, gy] };
  }
}
