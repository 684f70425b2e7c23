import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { validateCamera } from "../src/api.js";
import { clampOrbit, orbitEye, orbitForVolume, orbitToCamera, Throttle } from "../src/orbit.js";

describe("orbit geometry", () => {
  it("places the eye on the sphere around the target", () => {
    const eye = orbitEye({ azimuthDeg: 0, elevationDeg: 0, distance: 10, target: [1, 2, 3] });
    expect(eye[0]).toBeCloseTo(1);
    expect(eye[1]).toBeCloseTo(2);
    expect(eye[2]).toBeCloseTo(13);
    const side = orbitEye({ azimuthDeg: 90, elevationDeg: 0, distance: 10, target: [1, 2, 3] });
    expect(side[0]).toBeCloseTo(11);
    expect(side[2]).toBeCloseTo(3);
  });

  it("clamps elevation away from the poles and distance away from zero", () => {
    const c = clampOrbit({ azimuthDeg: 725, elevationDeg: 95, distance: 0, target: [0, 0, 0] });
    expect(c.azimuthDeg).toBeCloseTo(5);
    expect(c.elevationDeg).toBeLessThan(90);
    expect(c.distance).toBeGreaterThan(0);
  });

  it("always produces a camera the server accepts", () => {
    // includes the would-be degenerate poses: straight up, straight down
    for (const el of [-95, -89, 0, 89, 95]) {
      for (const az of [0, 45, 180, 270]) {
        const cam = orbitToCamera({ azimuthDeg: az, elevationDeg: el, distance: 50, target: [32, 32, 32] });
        expect(validateCamera(cam)).toBeNull();
      }
    }
  });

  it("frames a volume like the server default", () => {
    const p = orbitForVolume([64, 64, 64]);
    expect(p.target).toEqual([32, 32, 32]);
    expect(p.distance).toBeCloseTo(1.6 * 64);
  });
});

describe("Throttle", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("sends at most one value per window and keeps the newest", () => {
    const sent: number[] = [];
    const th = new Throttle<number>(100, (v) => sent.push(v), () => Date.now());
    th.push(1); // leading edge
    th.push(2);
    th.push(3);
    expect(sent).toEqual([1]);
    vi.advanceTimersByTime(99);
    expect(sent).toEqual([1]);
    vi.advanceTimersByTime(2);
    expect(sent).toEqual([1, 3]);
  });

  it("stays under the rate over a burst", () => {
    const sent: number[] = [];
    const th = new Throttle<number>(34, (v) => sent.push(v));
    for (let i = 0; i < 300; i++) {
      th.push(i);
      vi.advanceTimersByTime(10); // 100 pushes per second for 3 seconds
    }
    vi.advanceTimersByTime(100);
    expect(sent.length).toBeLessThanOrEqual(Math.ceil(3000 / 34) + 1);
    expect(sent[sent.length - 1]).toBe(299); // trailing edge delivered the newest
  });

  it("dispose drops the pending value", () => {
    const sent: number[] = [];
    const th = new Throttle<number>(50, (v) => sent.push(v));
    th.push(1);
    th.push(2);
    th.dispose();
    vi.advanceTimersByTime(200);
    expect(sent).toEqual([1]);
  });
});
