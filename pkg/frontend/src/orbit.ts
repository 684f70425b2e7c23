import type { CameraJson } from "./api.js";

// Orbit parameters are the single source of truth for the camera; the eye is
// recomputed from them on every change and shipped as the server's camera JSON.

export interface OrbitParams {
  azimuthDeg: number; // rotation around +Y, 0 looks down -Z toward the target
  elevationDeg: number;
  distance: number;
  target: [number, number, number];
}

const ELEVATION_LIMIT = 89.9; // keep up=(0,1,0) non-parallel to the view
const MIN_DISTANCE = 1e-3;

export function clampOrbit(p: OrbitParams): OrbitParams {
  return {
    azimuthDeg: ((p.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-ELEVATION_LIMIT, Math.min(ELEVATION_LIMIT, p.elevationDeg)),
    distance: Math.max(MIN_DISTANCE, p.distance),
    target: p.target,
  };
}

export function orbitEye(p: OrbitParams): [number, number, number] {
  const az = (p.azimuthDeg * Math.PI) / 180;
  const el = (p.elevationDeg * Math.PI) / 180;
  const [tx, ty, tz] = p.target;
  return [
    tx + p.distance * Math.cos(el) * Math.sin(az),
    ty + p.distance * Math.sin(el),
    tz + p.distance * Math.cos(el) * Math.cos(az),
  ];
}

export function orbitToCamera(p: OrbitParams, vfovDeg = 45): CameraJson {
  const c = clampOrbit(p);
  return { eye: orbitEye(c), center: [...c.target], up: [0, 1, 0], vfov_deg: vfovDeg };
}

/** Orbit framing a volume of the given dims the same way the server does. */
export function orbitForVolume(dims: number[]): OrbitParams {
  const [dx, dy, dz] = dims;
  return clampOrbit({
    azimuthDeg: 45,
    elevationDeg: 30,
    distance: 1.6 * Math.max(dx, dy, dz),
    target: [dx / 2, dy / 2, dz / 2],
  });
}

/** Trailing-edge rate limiter: forwards immediately when idle, otherwise
 *  keeps only the newest value and flushes it when the window elapses. */
export class Throttle<T> {
  private last = -Infinity;
  private pending: T | undefined;
  private timer: ReturnType<typeof setTimeout> | undefined;

  constructor(
    private minIntervalMs: number,
    private send: (value: T) => void,
    private now: () => number = () => Date.now(),
  ) {}

  push(value: T): void {
    const wait = this.last + this.minIntervalMs - this.now();
    if (wait <= 0 && this.timer === undefined) {
      this.last = this.now();
      this.send(value);
      return;
    }
    this.pending = value;
    if (this.timer === undefined) {
      this.timer = setTimeout(() => this.flush(), Math.max(wait, 0));
    }
  }

  private flush(): void {
    this.timer = undefined;
    if (this.pending === undefined) return;
    const value = this.pending;
    this.pending = undefined;
    this.last = this.now();
    this.send(value);
  }

  dispose(): void {
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = undefined;
    this.pending = undefined;
  }
}
