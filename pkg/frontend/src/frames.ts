// Binary frame messages: 12-byte little-endian header (frame_id u32,
// width u16, height u16, format u8, 3 pad bytes) followed by RGBA8 pixels.

export const FRAME_HEADER_BYTES = 12;
export const FORMAT_RGBA8 = 0;

export interface DecodedFrame {
  frameId: number;
  width: number;
  height: number;
  pixels: Uint8ClampedArray; // width*height*4 bytes, row-major
}

export function decodeFrame(buf: ArrayBuffer): DecodedFrame {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame too short: ${buf.byteLength} bytes`);
  }
  const head = new DataView(buf, 0, FRAME_HEADER_BYTES);
  const frameId = head.getUint32(0, true);
  const width = head.getUint16(4, true);
  const height = head.getUint16(6, true);
  const format = head.getUint8(8);
  if (format !== FORMAT_RGBA8) {
    throw new Error(`unknown frame format ${format}`);
  }
  const expected = width * height * 4;
  if (buf.byteLength !== FRAME_HEADER_BYTES + expected) {
    throw new Error(
      `payload is ${buf.byteLength - FRAME_HEADER_BYTES} bytes, ` +
      `${width}x${height} RGBA needs ${expected}`,
    );
  }
  // Copy so the frame stays valid if the socket reuses its buffer.
  const pixels = new Uint8ClampedArray(buf.slice(FRAME_HEADER_BYTES));
  return { frameId, width, height, pixels };
}

/** True when every pixel matches the given RGB (alpha ignored). */
export function isSolidColor(frame: DecodedFrame, r: number, g: number, b: number): boolean {
  const px = frame.pixels;
  for (let i = 0; i < px.length; i += 4) {
    if (px[i] !== r || px[i + 1] !== g || px[i + 2] !== b) return false;
  }
  return true;
}

/** Normalized luminance histogram of a frame, used behind the TF editor.
 *  The API exposes no voxel statistics, so the latest rendered frame is the
 *  value distribution we can actually show. */
export function luminanceHistogram(frame: DecodedFrame, bins = 64): number[] {
  const counts = new Array<number>(bins).fill(0);
  const px = frame.pixels;
  const n = px.length / 4;
  if (n === 0) return counts;
  for (let i = 0; i < px.length; i += 4) {
    const y = 0.2126 * px[i] + 0.7152 * px[i + 1] + 0.0722 * px[i + 2];
    const bin = Math.min(bins - 1, Math.floor((y / 255) * bins));
    counts[bin] += 1;
  }
  const peak = Math.max(...counts);
  return peak > 0 ? counts.map((c) => c / peak) : counts;
}
