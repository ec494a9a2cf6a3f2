import { describe, expect, it } from "vitest";
import { validateEdit, RANGES, type EditPayload } from "../src/validate.js";

function firstField(p: EditPayload, masks: string[] | null = null): string | null {
  const errs = validateEdit(p, masks);
  return errs.length ? errs[0].field : null;
}

// deterministic small rng for the fuzz cases
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("validateEdit", () => {
  it("accepts the canonical examples of every kind", () => {
    const ok: EditPayload[] = [
      { kind: "opaque", mask: "patch", params: { set: { roughness: 0.2 } } },
      {
        kind: "opaque",
        mask: "patch",
        params: { offset: { albedo: [0.1, -0.2, 0], metallic: -0.5 } },
      },
      { kind: "hsv", mask: "patch", params: { dh: 40, ss: 1.1 } },
      { kind: "hsv", mask: "patch", params: {} },
      { kind: "relight", params: { scale: 2.0 } },
      { kind: "relight", params: {} },
      {
        kind: "insert",
        params: { sphere: { center: [0, 0, 5], radius: 0.5 }, albedo: 0.6 },
      },
      {
        kind: "transparency",
        mask: "patch",
        params: { eta: 1.5, sphere: { center: [0, 0, 5], radius: 1 } },
      },
      { kind: "transparency", mask: "patch", params: { d1_const: 0.3 } },
      {
        kind: "hsv",
        mask_png_b64: "iVBORw0KGgo=",
        params: { dh: -360 },
        quality: "final",
        spp: 8,
        seed: 3,
      },
    ];
    for (const p of ok) {
      expect(validateEdit(p, ["patch"])).toEqual([]);
    }
  });

  it("rejects with the server's field path", () => {
    const cases: Array<[EditPayload, string]> = [
      [{ kind: "sparkle" } as EditPayload, "kind"],
      [{ kind: "hsv", mask: "patch", quality: "draft", params: {} }, "quality"],
      [{ kind: "hsv", mask: "patch", spp: 0, params: {} }, "spp"],
      [{ kind: "hsv", mask: "patch", spp: 2.5, params: {} }, "spp"],
      [{ kind: "hsv", mask: "patch", spp: 5000, params: {} }, "spp"],
      [{ kind: "hsv", mask: "patch", seed: 0.5, params: {} }, "seed"],
      [{ kind: "hsv", mask: "patch", params: 7 } as EditPayload, "params"],
      [{ kind: "hsv", params: {} }, "mask"],
      [{ kind: "hsv", mask: "nope", params: {} }, "mask"],
      [{ kind: "hsv", mask: "patch", params: { dh: 361 } }, "dh"],
      [{ kind: "hsv", mask: "patch", params: { dh: NaN } }, "dh"],
      [{ kind: "hsv", mask: "patch", params: { ss: -0.1 } }, "ss"],
      [{ kind: "hsv", mask: "patch", params: { sv: 4.5 } }, "sv"],
      [{ kind: "opaque", mask: "patch", params: {} }, "params"],
      [
        { kind: "opaque", mask: "patch", params: { set: { roughness: 1.5 } } },
        "set.roughness",
      ],
      [
        { kind: "opaque", mask: "patch", params: { set: { shininess: 0.5 } } },
        "set.shininess",
      ],
      [
        { kind: "opaque", mask: "patch", params: { offset: { metallic: -2 } } },
        "offset.metallic",
      ],
      [
        {
          kind: "opaque",
          mask: "patch",
          params: { set: { albedo: [0.5, 2.0, 0.5] } },
        },
        "set.albedo",
      ],
      [{ kind: "relight", params: { scale: 0 } }, "scale"],
      [{ kind: "relight", params: { scale: 101 } }, "scale"],
      [{ kind: "insert", params: {} }, "sphere"],
      [
        { kind: "insert", params: { sphere: { center: [0, 0], radius: 1 } } },
        "sphere.center",
      ],
      [
        {
          kind: "insert",
          params: { sphere: { center: [0, 0, Infinity], radius: 1 } },
        },
        "sphere.center",
      ],
      [
        { kind: "insert", params: { sphere: { center: [0, 0, 5] } } },
        "sphere.radius",
      ],
      [
        {
          kind: "insert",
          params: { sphere: { center: [0, 0, 5], radius: 1 }, roughness: 2 },
        },
        "roughness",
      ],
      [
        { kind: "transparency", mask: "patch", params: { eta: 0.05 } },
        "eta",
      ],
      [
        { kind: "transparency", mask: "patch", params: { transmission: -1 } },
        "transmission",
      ],
      [
        { kind: "transparency", mask: "patch", params: { a_bg: [1, 1] } },
        "a_bg",
      ],
      [{ kind: "transparency", mask: "patch", params: {} }, "d1_const"],
    ];
    for (const [p, field] of cases) {
      expect(firstField(p, ["patch"]), JSON.stringify(p)).toBe(field);
    }
  });

  it("holds the range table as the single boundary authority", () => {
    // every numeric slider accepts both endpoints and rejects just outside
    const build: Record<string, (v: number) => EditPayload> = {
      "hsv.dh": (v) => ({ kind: "hsv", mask: "m", params: { dh: v } }),
      "hsv.ss": (v) => ({ kind: "hsv", mask: "m", params: { ss: v } }),
      "hsv.sv": (v) => ({ kind: "hsv", mask: "m", params: { sv: v } }),
      "opaque.set": (v) => ({
        kind: "opaque",
        mask: "m",
        params: { set: { roughness: v } },
      }),
      "opaque.offset": (v) => ({
        kind: "opaque",
        mask: "m",
        params: { offset: { roughness: v } },
      }),
      "relight.scale": (v) => ({ kind: "relight", params: { scale: v } }),
      "insert.roughness": (v) => ({
        kind: "insert",
        params: { sphere: { center: [0, 0, 5], radius: 1 }, roughness: v },
      }),
      "insert.metallic": (v) => ({
        kind: "insert",
        params: { sphere: { center: [0, 0, 5], radius: 1 }, metallic: v },
      }),
      "sphere.radius": (v) => ({
        kind: "insert",
        params: { sphere: { center: [0, 0, 5], radius: v } },
      }),
      "transparency.transmission": (v) => ({
        kind: "transparency",
        mask: "m",
        params: { transmission: v, d1_const: 0.3 },
      }),
      "transparency.eta": (v) => ({
        kind: "transparency",
        mask: "m",
        params: { eta: v, d1_const: 0.3 },
      }),
      d1_const: (v) => ({
        kind: "transparency",
        mask: "m",
        params: { d1_const: v },
      }),
    };
    const rng = mulberry32(7);
    for (const [key, make] of Object.entries(build)) {
      const [lo, hi] = RANGES[key];
      const width = hi - lo;
      expect(validateEdit(make(lo), ["m"])).toEqual([]);
      expect(validateEdit(make(hi), ["m"])).toEqual([]);
      expect(validateEdit(make(lo - 1e-6 * (1 + width)), ["m"])).not.toEqual([]);
      expect(validateEdit(make(hi + 1e-6 * (1 + width)), ["m"])).not.toEqual([]);
      for (let i = 0; i < 50; i++) {
        const v = lo + rng() * width;
        expect(validateEdit(make(v), ["m"]), `${key}=${v}`).toEqual([]);
      }
      for (const bad of [NaN, Infinity, -Infinity, hi + width + 1, lo - width - 1]) {
        expect(validateEdit(make(bad), ["m"]), `${key}=${bad}`).not.toEqual([]);
      }
    }
  });

  it("skips the mask-name lookup when masks are unknown", () => {
    expect(validateEdit({ kind: "hsv", mask: "whatever", params: {} }, null)).toEqual([]);
  });
});
