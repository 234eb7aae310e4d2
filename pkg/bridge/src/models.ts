/**
 * Stub models served over the bridge, standing in for real checkpoints.
 *
 * - `disk`: a differentiable soft-disk model with an analytic coordinate
 *   gradient of the soft Dice loss (epsilon = 1.0, matching the harness).
 * - `echo`: returns the previous mask unchanged (zeros on the first round)
 *   and declares no gradient support.
 */

import type { ClickFrame } from './protocol.js';

export interface Session {
  height: number;
  width: number;
  image: Float32Array; // H*W*3
}

export interface BridgeModel {
  inputMode: 'disk_maps' | 'raw_coordinates';
  supportsGradients: boolean;
  nativeResolution: number | null;
  predict(session: Session, clicks: ClickFrame[], prevMask: Float32Array | null): Float64Array;
  gradient(
    session: Session,
    clicks: ClickFrame[],
    gt: Uint8Array,
    direction: 'min' | 'max',
    active: number,
  ): [number, number];
}

export class GradientsUnsupported extends Error {}

export interface DiskModelOptions {
  radius?: number;
  sharpness?: number;
  weight?: number;
  bias?: number;
}

const sigmoid = (t: number): number =>
  t >= 0 ? 1 / (1 + Math.exp(-t)) : Math.exp(t) / (1 + Math.exp(t));

export class DiskStubModel implements BridgeModel {
  readonly inputMode = 'raw_coordinates';
  readonly supportsGradients = true;
  readonly nativeResolution = null;
  private readonly radius: number;
  private readonly sharpness: number;
  private readonly weight: number;
  private readonly bias: number;

  constructor(options: DiskModelOptions = {}) {
    this.radius = options.radius ?? 5.0;
    this.sharpness = options.sharpness ?? 2.0;
    this.weight = options.weight ?? 8.0;
    this.bias = options.bias ?? -4.0;
  }

  /** Per-polarity max-combined soft disks plus the owning click per pixel. */
  private rasterize(session: Session, clicks: ClickFrame[]) {
    const { height, width } = session;
    const n = height * width;
    const pos = new Float64Array(n);
    const neg = new Float64Array(n);
    const ownerPos = new Int32Array(n).fill(-1);
    const ownerNeg = new Int32Array(n).fill(-1);
    clicks.forEach((click, index) => {
      const target = click.sign === 1 ? pos : neg;
      const owner = click.sign === 1 ? ownerPos : ownerNeg;
      for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
          const d = Math.hypot(x - click.x, y - click.y);
          const m = sigmoid(this.sharpness * (this.radius - d));
          const i = y * width + x;
          if (m > target[i]) {
            target[i] = m;
            owner[i] = index;
          }
        }
      }
    });
    return { pos, neg, ownerPos, ownerNeg };
  }

  predict(session: Session, clicks: ClickFrame[]): Float64Array {
    const { pos, neg } = this.rasterize(session, clicks);
    const out = new Float64Array(pos.length);
    for (let i = 0; i < out.length; i++) {
      out[i] = sigmoid(this.weight * (pos[i] - neg[i]) + this.bias);
    }
    return out;
  }

  gradient(
    session: Session,
    clicks: ClickFrame[],
    gt: Uint8Array,
    direction: 'min' | 'max',
    active: number,
  ): [number, number] {
    const { height, width } = session;
    const { pos, neg, ownerPos, ownerNeg } = this.rasterize(session, clicks);
    const n = height * width;
    const probs = new Float64Array(n);
    let inter = 0;
    let sumP = 0;
    let sumG = 0;
    for (let i = 0; i < n; i++) {
      probs[i] = sigmoid(this.weight * (pos[i] - neg[i]) + this.bias);
      const g = gt[i] ? 1 : 0;
      inter += probs[i] * g;
      sumP += probs[i];
      sumG += g;
    }
    const denom = sumP + sumG + 1.0; // soft Dice epsilon matches the harness
    const signDir = direction === 'max' ? 1 : -1;

    const click = clicks[active];
    const owner = click.sign === 1 ? ownerPos : ownerNeg;
    const value = click.sign === 1 ? pos : neg;
    const mapSign = click.sign === 1 ? 1 : -1;
    let gx = 0;
    let gy = 0;
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const i = y * width + x;
        if (owner[i] !== active) continue;
        const d = Math.hypot(x - click.x, y - click.y);
        if (d < 1e-12) continue;
        const g = gt[i] ? 1 : 0;
        // dDice/dprob via the quotient rule, then through sigmoid and max
        const dLdProb = -(2 * g * denom - (2 * inter + 1.0)) / (denom * denom);
        const dProbDz = probs[i] * (1 - probs[i]);
        const m = value[i];
        const dmScale = this.sharpness * m * (1 - m) / d;
        const chain = signDir * dLdProb * dProbDz * this.weight * mapSign * dmScale;
        gx += chain * (x - click.x);
        gy += chain * (y - click.y);
      }
    }
    return [gx, gy];
  }
}

export class EchoModel implements BridgeModel {
  readonly inputMode = 'disk_maps';
  readonly supportsGradients = false;
  readonly nativeResolution = null;

  predict(session: Session, _clicks: ClickFrame[], prevMask: Float32Array | null): Float64Array {
    const n = session.height * session.width;
    const out = new Float64Array(n);
    if (prevMask) {
      for (let i = 0; i < n; i++) out[i] = prevMask[i];
    }
    return out;
  }

  gradient(): [number, number] {
    throw new GradientsUnsupported('echo model serves no gradients');
  }
}

export function createModel(kind: string, options: DiskModelOptions): BridgeModel {
  if (kind === 'disk') return new DiskStubModel(options);
  if (kind === 'echo') return new EchoModel();
  throw new Error(`unknown model kind: ${kind}`);
}
