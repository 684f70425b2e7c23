import { FRAME_HEADER_BYTES } from "../src/frames.js";

export function makeFrameBuffer(
  frameId: number,
  w: number,
  h: number,
  fill: (i: number) => number = (i) => (i * 7) % 256,
): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES + w * h * 4);
  const head = new DataView(buf);
  head.setUint32(0, frameId, true);
  head.setUint16(4, w, true);
  head.setUint16(6, h, true);
  head.setUint8(8, 0);
  const px = new Uint8Array(buf, FRAME_HEADER_BYTES);
  for (let i = 0; i < px.length; i++) px[i] = fill(i);
  return buf;
}

export const waitFor = async (cond: () => boolean, ms = 5000, step = 10): Promise<void> => {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > ms) throw new Error("timed out waiting for condition");
    await new Promise((r) => setTimeout(r, step));
  }
};
