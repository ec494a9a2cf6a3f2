/** Display transfer helpers. The engine's LDR previews clip to [0, 1] and
 * apply the standard sRGB curve; the console uses the same pair so HDR
 * values painted locally agree with server PNGs to 8-bit precision. */

export function clip01(v: number): number {
  return v < 0 ? 0 : v > 1 ? 1 : v;
}

export function srgbEncode(linear: number): number {
  const c = clip01(linear);
  return c <= 0.0031308 ? c * 12.92 : 1.055 * Math.pow(c, 1 / 2.4) - 0.055;
}

export function srgbDecode(encoded: number): number {
  const c = clip01(encoded);
  return c <= 0.04045 ? c / 12.92 : Math.pow((c + 0.055) / 1.055, 2.4);
}

/** 8-bit display value for a linear HDR sample. */
export function toDisplayByte(linear: number): number {
  return Math.round(srgbEncode(linear) * 255);
}
