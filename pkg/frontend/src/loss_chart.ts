import type { LossRecord } from "./api.js";

// Loss history model for the sparkline. Fed from /api/loss?since=<cursor>;
// the cursor guarantees each step is appended exactly once.

export class LossSeries {
  steps: number[] = [];
  losses: number[] = [];
  capacity: number;

  constructor(capacity = 4096) {
    this.capacity = capacity;
  }

  get cursor(): number {
    return this.steps.length ? this.steps[this.steps.length - 1] : -1;
  }

  get length(): number {
    return this.steps.length;
  }

  append(records: LossRecord[]): void {
    for (const [step, loss] of records) {
      if (step <= this.cursor) continue; // server resends are idempotent
      this.steps.push(step);
      this.losses.push(loss);
    }
    const extra = this.steps.length - this.capacity;
    if (extra > 0) {
      this.steps.splice(0, extra);
      this.losses.splice(0, extra);
    }
  }

  /** SVG polyline points for a w*h viewport, log-scaled loss, newest right. */
  polyline(w: number, h: number, window = 512): string {
    const n = Math.min(this.losses.length, window);
    if (n === 0) return "";
    const tail = this.losses.slice(-n);
    const logs = tail.map((l) => Math.log10(Math.max(l, 1e-12)));
    let lo = Math.min(...logs);
    let hi = Math.max(...logs);
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    const pts: string[] = [];
    for (let i = 0; i < n; i++) {
      const x = n === 1 ? w : (i / (n - 1)) * w;
      const y = h - ((logs[i] - lo) / (hi - lo)) * h;
      pts.push(`${x.toFixed(1)},${y.toFixed(1)}`);
    }
    return pts.join(" ");
  }
}
