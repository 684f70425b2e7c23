import { validateTf, type TfJson } from "./api.js";

// Draft model behind the transfer-function editor. All edits clamp so the
// draft is valid at every moment; commit() is therefore always sendable.

export interface TfPoint {
  v: number; // normalized value position in [0, 1]
  a: number; // opacity in [0, 1]
}

const MIN_GAP = 1e-3; // positions stay strictly increasing

export class TfDraft {
  points: TfPoint[];
  colors: number[][];
  densityScale: number;

  constructor(tf: TfJson) {
    this.points = tf.opacities.map(([v, a]) => ({ v, a: Math.min(Math.max(a, 0), 1) }));
    this.colors = tf.colors.map((row) => [...row]);
    this.densityScale = tf.density_scale;
  }

  /** Move point i toward (v, a); both axes clamp (neighbors bound v). */
  drag(i: number, v: number, a: number): void {
    const lo = i > 0 ? this.points[i - 1].v + MIN_GAP : 0;
    const hi = i < this.points.length - 1 ? this.points[i + 1].v - MIN_GAP : 1;
    this.points[i] = {
      v: Math.min(Math.max(v, lo), Math.max(lo, hi)),
      a: Math.min(Math.max(a, 0), 1),
    };
  }

  /** Insert a point at position v with the interpolated opacity. */
  add(v: number): number {
    v = Math.min(Math.max(v, 0), 1);
    let i = this.points.findIndex((p) => p.v >= v);
    if (i === -1) i = this.points.length;
    if (i > 0 && v - this.points[i - 1].v < MIN_GAP) v = this.points[i - 1].v + MIN_GAP;
    if (i < this.points.length && this.points[i].v - v < MIN_GAP) {
      return i; // no room between neighbors; treat as grabbing the right one
    }
    this.points.splice(i, 0, { v, a: this.opacityAt(v) });
    return i;
  }

  remove(i: number): void {
    if (this.points.length <= 2) return; // keep a usable ramp
    this.points.splice(i, 1);
  }

  zeroAll(): void {
    this.points = this.points.map((p) => ({ v: p.v, a: 0 }));
  }

  opacityAt(v: number): number {
    const pts = this.points;
    if (v <= pts[0].v) return pts[0].a;
    for (let i = 1; i < pts.length; i++) {
      if (v <= pts[i].v) {
        const t = (v - pts[i - 1].v) / (pts[i].v - pts[i - 1].v);
        return pts[i - 1].a + t * (pts[i].a - pts[i - 1].a);
      }
    }
    return pts[pts.length - 1].a;
  }

  toJson(): TfJson {
    return {
      colors: this.colors.map((row) => [...row]),
      opacities: this.points.map((p) => [p.v, p.a]),
      density_scale: this.densityScale,
    };
  }

  /** Null when the draft would pass server validation (it always should). */
  problem(): string | null {
    return validateTf(this.toJson());
  }
}
