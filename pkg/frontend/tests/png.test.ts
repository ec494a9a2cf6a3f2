import { inflateSync } from "node:zlib";
import { describe, expect, it } from "vitest";
import { encodeGrayPng, toBase64 } from "../src/png.js";
import { MaskPainter } from "../src/mask.js";

function be32(bytes: Uint8Array, off: number): number {
  return (
    ((bytes[off] << 24) | (bytes[off + 1] << 16) | (bytes[off + 2] << 8) | bytes[off + 3]) >>> 0
  );
}

function findChunk(png: Uint8Array, type: string): Uint8Array {
  let off = 8;
  while (off < png.length) {
    const len = be32(png, off);
    const t = String.fromCharCode(...png.subarray(off + 4, off + 8));
    if (t === type) return png.subarray(off + 8, off + 8 + len);
    off += 12 + len;
  }
  throw new Error(`no ${type} chunk`);
}

describe("encodeGrayPng", () => {
  it("emits a well-formed grayscale PNG that inflates to the scanlines", () => {
    const w = 5;
    const h = 3;
    const gray = new Uint8Array(w * h);
    gray[0] = 255;
    gray[7] = 255;
    gray[14] = 128;
    const png = encodeGrayPng(w, h, gray);
    expect([...png.subarray(0, 8)]).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
    const ihdr = findChunk(png, "IHDR");
    expect(be32(ihdr, 0)).toBe(w);
    expect(be32(ihdr, 4)).toBe(h);
    expect(ihdr[8]).toBe(8); // bit depth
    expect(ihdr[9]).toBe(0); // grayscale
    const raw = inflateSync(findChunk(png, "IDAT"));
    expect(raw.length).toBe(h * (w + 1));
    for (let y = 0; y < h; y++) {
      expect(raw[y * (w + 1)]).toBe(0); // filter none
      for (let x = 0; x < w; x++) {
        expect(raw[y * (w + 1) + 1 + x]).toBe(gray[y * w + x]);
      }
    }
  });

  it("splits large images into multiple stored blocks", () => {
    const w = 300;
    const h = 300; // raw stream 90300 bytes > one stored block
    const gray = new Uint8Array(w * h).fill(200);
    const raw = inflateSync(findChunk(encodeGrayPng(w, h, gray), "IDAT"));
    expect(raw.length).toBe(h * (w + 1));
    expect(raw[1]).toBe(200);
    expect(raw[raw.length - 1]).toBe(200);
  });

  it("rejects a grid/size mismatch", () => {
    expect(() => encodeGrayPng(4, 4, new Uint8Array(15))).toThrow(/bytes/);
  });
});

describe("toBase64", () => {
  it("matches Buffer's encoding including padding", () => {
    for (const n of [0, 1, 2, 3, 4, 5, 31, 64, 100]) {
      const bytes = new Uint8Array(n).map((_, i) => (i * 37 + n) & 0xff);
      expect(toBase64(bytes)).toBe(Buffer.from(bytes).toString("base64"));
    }
  });
});

describe("MaskPainter", () => {
  it("paints, erases, strokes, and clips at the borders", () => {
    const p = new MaskPainter(32, 32);
    expect(p.isEmpty()).toBe(true);
    p.brush(16, 16, 3);
    const painted = p.count();
    expect(painted).toBeGreaterThan(20);
    expect(p.grid[16 * 32 + 16]).toBe(255);
    p.brush(16, 16, 1, true);
    expect(p.count()).toBeLessThan(painted);
    p.brush(0, 0, 5); // off-grid part of the disc must clip, not throw
    p.stroke(2, 30, 29, 30, 1.5);
    expect(p.grid[30 * 32 + 15]).toBe(255); // midpoint of the stroke
    p.clear();
    expect(p.isEmpty()).toBe(true);
  });

  it("uploads as a PNG whose scanlines reproduce the grid", () => {
    const p = new MaskPainter(8, 8);
    p.brush(4, 4, 2);
    const png = Uint8Array.from(Buffer.from(p.toPngB64(), "base64"));
    const raw = inflateSync(findChunk(png, "IDAT"));
    for (let y = 0; y < 8; y++) {
      for (let x = 0; x < 8; x++) {
        expect(raw[y * 9 + 1 + x]).toBe(p.grid[y * 8 + x]);
      }
    }
  });
});
