/** Mask painting model, independent of the canvas so it can be tested
 * headlessly. The canvas layer draws strokes for feedback; this grid is
 * what actually gets uploaded, as a binary grayscale PNG the engine
 * registers like any other named mask. */

import { encodeGrayPng, toBase64 } from "./png.js";

export class MaskPainter {
  width: number;
  height: number;
  grid: Uint8Array;

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0) throw new Error("empty mask grid");
    this.width = width;
    this.height = height;
    this.grid = new Uint8Array(width * height);
  }

  /** Paint (or erase) a filled disc at pixel (cx, cy). */
  brush(cx: number, cy: number, radius: number, erase = false): void {
    const v = erase ? 0 : 255;
    const r = Math.max(0, radius);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
    const r2 = r * r;
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.grid[y * this.width + x] = v;
      }
    }
  }

  /** Straight stroke between two points, stamped densely enough that no
   * gap appears at any brush size >= 1. */
  stroke(x0: number, y0: number, x1: number, y1: number, radius: number,
         erase = false): void {
    const steps = Math.max(1, Math.ceil(Math.hypot(x1 - x0, y1 - y0)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.brush(x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius, erase);
    }
  }

  clear(): void {
    this.grid.fill(0);
  }

  count(): number {
    let n = 0;
    for (let i = 0; i < this.grid.length; i++) if (this.grid[i]) n++;
    return n;
  }

  isEmpty(): boolean {
    return this.count() === 0;
  }

  toPngB64(): string {
    return toBase64(encodeGrayPng(this.width, this.height, this.grid));
  }
}
