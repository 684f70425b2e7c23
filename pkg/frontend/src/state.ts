import type { ApiClient, StateJson } from "./api.js";
import { LossSeries } from "./loss_chart.js";

// 2 Hz poller keeping the session state and the loss series fresh. The WS
// stream carries per-frame stats; this covers everything else (lr, params,
// renderer panel, error surface) and works even while frames stall.

export class StatePoller {
  state: StateJson | null = null;
  loss = new LossSeries();
  lastError: string | null = null;
  private timer: ReturnType<typeof setInterval> | undefined;

  constructor(
    private api: ApiClient,
    private onUpdate: (s: StateJson) => void,
    private intervalMs = 500,
  ) {}

  start(): void {
    if (this.timer !== undefined) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== undefined) clearInterval(this.timer);
    this.timer = undefined;
  }

  async tick(): Promise<void> {
    try {
      const [state, loss] = await Promise.all([
        this.api.state(),
        this.api.loss(this.loss.cursor),
      ]);
      this.state = state;
      this.loss.append(loss.records);
      this.lastError = null;
      this.onUpdate(state);
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
  }
}
