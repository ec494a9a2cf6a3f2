/** PFM reader for the HDR endpoints. The engine writes little-endian
 * float32 with bottom-to-top scanlines (scale line "-1.0"); rows here are
 * returned top-first so (x, y) matches screen coordinates. */

export interface FloatImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** row-major, top row first, channels interleaved */
  data: Float32Array;
}

function readHeaderLine(bytes: Uint8Array, pos: number): [string, number] {
  let end = pos;
  while (end < bytes.length && bytes[end] !== 0x0a) end++;
  if (end >= bytes.length) throw new Error("pfm: truncated header");
  let s = "";
  for (let i = pos; i < end; i++) s += String.fromCharCode(bytes[i]);
  return [s.trim(), end + 1];
}

export function parsePfm(buf: ArrayBuffer): FloatImage {
  const bytes = new Uint8Array(buf);
  let pos = 0;
  let magic: string, dims: string, scaleLine: string;
  [magic, pos] = readHeaderLine(bytes, pos);
  [dims, pos] = readHeaderLine(bytes, pos);
  [scaleLine, pos] = readHeaderLine(bytes, pos);
  if (magic !== "PF" && magic !== "Pf") {
    throw new Error(`pfm: bad magic ${JSON.stringify(magic)}`);
  }
  const channels: 1 | 3 = magic === "PF" ? 3 : 1;
  const m = dims.split(/\s+/).map(Number);
  if (m.length !== 2 || !m.every((v) => Number.isInteger(v) && v > 0)) {
    throw new Error(`pfm: bad dimensions ${JSON.stringify(dims)}`);
  }
  const [width, height] = m;
  const scale = Number(scaleLine);
  if (!Number.isFinite(scale) || scale === 0) {
    throw new Error(`pfm: bad scale ${JSON.stringify(scaleLine)}`);
  }
  const littleEndian = scale < 0;
  const count = width * height * channels;
  if (bytes.length - pos < count * 4) throw new Error("pfm: truncated data");
  const view = new DataView(buf, pos);
  const data = new Float32Array(count);
  const rowLen = width * channels;
  for (let y = 0; y < height; y++) {
    const srcRow = height - 1 - y; // stored bottom-up
    for (let i = 0; i < rowLen; i++) {
      data[y * rowLen + i] = view.getFloat32(
        (srcRow * rowLen + i) * 4,
        littleEndian,
      );
    }
  }
  return { width, height, channels, data };
}

/** Linear value(s) at pixel (x, y); length 1 or 3. */
export function pixel(img: FloatImage, x: number, y: number): number[] {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) {
    throw new Error(`pixel (${x}, ${y}) outside ${img.width}x${img.height}`);
  }
  const base = (y * img.width + x) * img.channels;
  const out: number[] = [];
  for (let c = 0; c < img.channels; c++) out.push(img.data[base + c]);
  return out;
}

/** The inspector's display formatting: four decimals, no scientific
 * notation surprises for the HDR values we actually serve. */
export function formatValue(v: number): string {
  return v.toFixed(4);
}

export function formatPixel(values: number[]): string {
  return values.map(formatValue).join(", ");
}
