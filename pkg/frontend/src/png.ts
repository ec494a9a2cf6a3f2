/** Minimal 8-bit grayscale PNG writer for mask upload. Deflate "stored"
 * blocks only: no compression dependency, byte-deterministic, decodable by
 * any PNG reader. Masks are small (engine images are ~64..512 px), so the
 * size overhead is irrelevant. */

const CRC_TABLE = (() => {
  const t = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    t[n] = c >>> 0;
  }
  return t;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function be32(v: number): number[] {
  return [(v >>> 24) & 0xff, (v >>> 16) & 0xff, (v >>> 8) & 0xff, v & 0xff];
}

function chunk(type: string, data: Uint8Array): number[] {
  const body = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) body[i] = type.charCodeAt(i);
  body.set(data, 4);
  return [...be32(data.length), ...body, ...be32(crc32(body))];
}

/** zlib stream around raw bytes using stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01];
  for (let off = 0; off < raw.length || off === 0; off += 65535) {
    const len = Math.min(65535, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    blocks.push(final, len & 0xff, (len >>> 8) & 0xff);
    blocks.push((~len & 0xff) >>> 0, ((~len >>> 8) & 0xff) >>> 0);
    for (let i = 0; i < len; i++) blocks.push(raw[off + i]);
    if (final) break;
  }
  const ad = adler32(raw);
  blocks.push(...be32(ad));
  return new Uint8Array(blocks);
}

/** gray: length width*height, row-major top-first, values 0..255. The
 * engine thresholds at > 127 when it decodes the mask. */
export function encodeGrayPng(
  width: number,
  height: number,
  gray: Uint8Array,
): Uint8Array {
  if (gray.length !== width * height) {
    throw new Error(`gray has ${gray.length} bytes, want ${width * height}`);
  }
  const ihdr = new Uint8Array([
    ...be32(width),
    ...be32(height),
    8, // bit depth
    0, // color type: grayscale
    0,
    0,
    0,
  ]);
  // one filter byte (0 = none) per scanline
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0;
    raw.set(gray.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const out: number[] = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
  out.push(...chunk("IHDR", ihdr));
  out.push(...chunk("IDAT", zlibStored(raw)));
  out.push(...chunk("IEND", new Uint8Array(0)));
  return new Uint8Array(out);
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function toBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i];
    const b1 = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const b2 = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += B64[b0 >> 2] + B64[((b0 & 3) << 4) | (b1 >> 4)];
    out += i + 1 < bytes.length ? B64[((b1 & 15) << 2) | (b2 >> 6)] : "=";
    out += i + 2 < bytes.length ? B64[b2 & 63] : "=";
  }
  return out;
}
