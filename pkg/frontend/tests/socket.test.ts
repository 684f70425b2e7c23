import { afterEach, describe, expect, it } from "vitest";
import { WebSocketServer, WebSocket as WsClient } from "ws";

import { FrameSocket } from "../src/socket.js";
import type { DecodedFrame } from "../src/frames.js";
import { makeFrameBuffer, waitFor } from "./helpers.js";

const makeWs = (url: string) => new WsClient(url) as any;

let servers: WebSocketServer[] = [];
let sockets: FrameSocket[] = [];

function listen(onConnection: (ws: import("ws").WebSocket) => void): Promise<number> {
  const wss = new WebSocketServer({ port: 0 });
  servers.push(wss);
  wss.on("connection", onConnection);
  return new Promise((resolve) => {
    wss.on("listening", () => resolve((wss.address() as { port: number }).port));
  });
}

afterEach(async () => {
  for (const s of sockets) s.close();
  sockets = [];
  await Promise.all(servers.map((s) => new Promise((r) => s.close(r))));
  servers = [];
});

describe("FrameSocket", () => {
  it("pairs each binary frame with the stats text preceding it", async () => {
    const port = await listen((ws) => {
      ws.send(JSON.stringify({ frame_id: 1, step: 10, paused: false }));
      ws.send(makeFrameBuffer(1, 2, 2));
      ws.send(JSON.stringify({ frame_id: 2, step: 11, paused: false }));
      ws.send(makeFrameBuffer(2, 2, 2));
    });
    const got: Array<{ frame: DecodedFrame; step: number | undefined }> = [];
    const sock = new FrameSocket(`ws://127.0.0.1:${port}`, {
      onFrame: (frame, stats) => got.push({ frame, step: stats?.step }),
      makeWebSocket: makeWs,
    });
    sockets.push(sock);
    sock.connect();
    await waitFor(() => got.length === 2);
    expect(got[0].frame.frameId).toBe(1);
    expect(got[0].step).toBe(10);
    expect(got[1].frame.frameId).toBe(2);
    expect(got[1].step).toBe(11);
  });

  it("resolves control messages with their acks, in order", async () => {
    const port = await listen((ws) => {
      ws.on("message", (data, isBinary) => {
        if (isBinary) return;
        const msg = JSON.parse(String(data));
        if (msg.type === "training") ws.send(JSON.stringify({ ok: true, paused: true }));
        else ws.send(JSON.stringify({ ok: false, error: "unknown control kind" }));
      });
    });
    let opened = false;
    const sock = new FrameSocket(`ws://127.0.0.1:${port}`, {
      makeWebSocket: makeWs,
      onStatus: (s) => { if (s === "open") opened = true; },
    });
    sockets.push(sock);
    sock.connect();
    await waitFor(() => opened);
    const ack = await sock.control("training", { action: "pause" });
    expect(ack.paused).toBe(true);
    await expect(sock.control("bogus", {})).rejects.toThrow(/unknown control kind/);
  });

  it("reconnects after a drop and reports status transitions", async () => {
    let connections = 0;
    const port = await listen((ws) => {
      connections++;
      if (connections === 1) ws.close(); // first connection is dropped immediately
    });
    const statuses: string[] = [];
    const sock = new FrameSocket(`ws://127.0.0.1:${port}`, {
      onStatus: (s) => statuses.push(s),
      makeWebSocket: makeWs,
      baseRetryMs: 20,
    });
    sockets.push(sock);
    sock.connect();
    await waitFor(() => connections >= 2 && statuses.filter((s) => s === "open").length >= 2);
    expect(statuses).toContain("retrying");
  });

  it("backs off exponentially while the server is unreachable", async () => {
    const waits: number[] = [];
    // a port from the dynamic range with nothing listening
    const sock = new FrameSocket("ws://127.0.0.1:1", {
      onStatus: (s, retryInMs) => { if (s === "retrying") waits.push(retryInMs ?? 0); },
      makeWebSocket: makeWs,
      baseRetryMs: 10,
      maxRetryMs: 80,
    });
    sockets.push(sock);
    sock.connect();
    await waitFor(() => waits.length >= 5, 10_000);
    expect(waits[1]).toBe(waits[0] * 2);
    expect(waits[2]).toBe(waits[1] * 2);
    expect(Math.max(...waits)).toBeLessThanOrEqual(80);
  });
});
