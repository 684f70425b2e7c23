import { decodeFrame, type DecodedFrame } from "./frames.js";

// Frame stream plus control channel over one WebSocket. The server emits a
// JSON stats text right before each binary frame; control messages sent by
// the client are answered in order with JSON acks carrying an "ok" field.

export interface FrameStats {
  frame_id: number;
  generation: number;
  step: number;
  loss: number | null;
  paused: boolean;
  mode: string;
  accum_frames: number;
  field_evaluations: number;
  ms: number;
}

export type SocketStatus = "connecting" | "open" | "retrying" | "closed";

type WebSocketLike = {
  binaryType: string;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
};

export interface FrameSocketOptions {
  onFrame?: (frame: DecodedFrame, stats: FrameStats | null) => void;
  onStatus?: (status: SocketStatus, retryInMs?: number) => void;
  makeWebSocket?: (url: string) => WebSocketLike;
  baseRetryMs?: number;
  maxRetryMs?: number;
}

interface PendingAck {
  resolve: (ack: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class FrameSocket {
  private ws: WebSocketLike | null = null;
  private lastStats: FrameStats | null = null;
  private pending: PendingAck[] = [];
  private retryMs: number;
  private retryTimer: ReturnType<typeof setTimeout> | undefined;
  private stopped = false;
  readonly options: Required<Pick<FrameSocketOptions, "baseRetryMs" | "maxRetryMs">>;

  constructor(private url: string, private opts: FrameSocketOptions = {}) {
    this.options = { baseRetryMs: opts.baseRetryMs ?? 500, maxRetryMs: opts.maxRetryMs ?? 10_000 };
    this.retryMs = this.options.baseRetryMs;
  }

  connect(): void {
    if (this.stopped) return;
    this.opts.onStatus?.("connecting");
    const make = this.opts.makeWebSocket ?? ((u: string) => new WebSocket(u) as unknown as WebSocketLike);
    let ws: WebSocketLike;
    try {
      ws = make(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.ws = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.retryMs = this.options.baseRetryMs;
      this.opts.onStatus?.("open");
    };
    ws.onmessage = (ev) => this.handleMessage(ev.data);
    ws.onerror = () => { /* close follows; retry is handled there */ };
    ws.onclose = () => {
      this.failPending(new Error("connection closed"));
      if (!this.stopped) this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    this.ws = null;
    this.opts.onStatus?.("retrying", this.retryMs);
    this.retryTimer = setTimeout(() => this.connect(), this.retryMs);
    this.retryMs = Math.min(this.retryMs * 2, this.options.maxRetryMs);
  }

  private handleMessage(data: unknown): void {
    if (typeof data === "string") {
      let msg: Record<string, unknown>;
      try {
        msg = JSON.parse(data);
      } catch {
        return;
      }
      if ("ok" in msg) {
        const waiter = this.pending.shift();
        if (waiter) {
          msg.ok ? waiter.resolve(msg) : waiter.reject(new Error(String(msg.error ?? "rejected")));
        }
      } else if ("frame_id" in msg) {
        this.lastStats = msg as unknown as FrameStats;
      }
      return;
    }
    if (data instanceof ArrayBuffer) {
      this.opts.onFrame?.(decodeFrame(data), this.lastStats);
    }
  }

  /** Send a control message ({"type": kind, ...body}); resolves on its ack. */
  control(kind: string, body: Record<string, unknown>): Promise<Record<string, unknown>> {
    if (!this.ws) return Promise.reject(new Error("not connected"));
    const text = JSON.stringify({ type: kind, ...body });
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      try {
        this.ws!.send(text);
      } catch (err) {
        this.pending.pop();
        reject(err instanceof Error ? err : new Error(String(err)));
      }
    });
  }

  private failPending(err: Error): void {
    const waiters = this.pending;
    this.pending = [];
    for (const w of waiters) w.reject(err);
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== undefined) clearTimeout(this.retryTimer);
    this.failPending(new Error("socket closed"));
    this.ws?.close();
    this.ws = null;
    this.opts.onStatus?.("closed");
  }
}
