/** Client-side mirror of the engine's edit validation. Field paths,
 * ranges, and check order match the server so an inline complaint lands on
 * the same control the server would reject, and a payload that passes here
 * is never turned away with a 400. */

export type EditKind =
  | "opaque"
  | "hsv"
  | "relight"
  | "insert"
  | "transparency";

export const EDIT_KINDS: EditKind[] = [
  "opaque",
  "hsv",
  "relight",
  "insert",
  "transparency",
];

export interface FieldError {
  field: string;
  message: string;
}

export interface EditPayload {
  kind?: unknown;
  quality?: unknown;
  spp?: unknown;
  seed?: unknown;
  mask?: unknown;
  mask_png_b64?: unknown;
  mask_name?: unknown;
  params?: unknown;
  [key: string]: unknown;
}

/** Numeric ranges per slider; exported so controls can clamp as the user
 * drags instead of only complaining at submit time. */
export const RANGES: Record<string, [number, number]> = {
  "hsv.dh": [-360, 360],
  "hsv.ss": [0, 4],
  "hsv.sv": [0, 4],
  "opaque.set": [0, 1],
  "opaque.offset": [-1, 1],
  "relight.scale": [1e-3, 100],
  "insert.roughness": [0, 1],
  "insert.metallic": [0, 1],
  "sphere.radius": [1e-3, 100],
  "transparency.transmission": [0, 1],
  "transparency.eta": [0.1, 5],
  d1_const: [0, 1e6],
  spp: [1, 4096],
};

const MAT_NAMES = ["albedo", "roughness", "metallic"];

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function inRange(v: unknown, lo: number, hi: number): boolean {
  return isNum(v) && lo <= v && v <= hi;
}

function numberField(
  params: Record<string, unknown>,
  key: string,
  lo: number,
  hi: number,
  required: boolean,
  field: string,
  errs: FieldError[],
): void {
  const v = params[key];
  if (v === undefined || v === null) {
    if (required) errs.push({ field, message: "required" });
    return;
  }
  if (!inRange(v, lo, hi)) {
    errs.push({ field, message: `must be a number in [${lo}, ${hi}]` });
  }
}

function rgb01Field(
  params: Record<string, unknown>,
  key: string,
  required: boolean,
  field: string,
  errs: FieldError[],
): void {
  let v = params[key];
  if (v === undefined || v === null) {
    if (required) errs.push({ field, message: "required" });
    return;
  }
  if (isNum(v)) v = [v, v, v];
  const ok =
    Array.isArray(v) && v.length === 3 && v.every((c) => inRange(c, 0, 1));
  if (!ok) errs.push({ field, message: "must be 3 numbers in [0, 1]" });
}

function isObject(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function maskField(
  payload: EditPayload,
  knownMasks: string[] | null,
  errs: FieldError[],
): void {
  if (typeof payload.mask_png_b64 === "string" && payload.mask_png_b64) return;
  const name = payload.mask;
  if (name === undefined || name === null) {
    errs.push({ field: "mask", message: "required for this edit kind" });
    return;
  }
  if (knownMasks !== null && !knownMasks.includes(String(name))) {
    errs.push({ field: "mask", message: `unknown mask '${String(name)}'` });
  }
}

function sphereField(
  params: Record<string, unknown>,
  errs: FieldError[],
): void {
  const sph = params.sphere;
  if (!isObject(sph)) {
    errs.push({ field: "sphere", message: "required: {center, radius}" });
    return;
  }
  const center = sph.center;
  const ok =
    Array.isArray(center) && center.length === 3 && center.every(isNum);
  if (!ok) {
    errs.push({ field: "sphere.center", message: "must be 3 finite numbers" });
  }
  numberField(sph, "radius", 1e-3, 100, true, "sphere.radius", errs);
}

/** Validate an edit payload; [] means the server will take it. knownMasks
 * comes from GET /scene; pass null to skip the name lookup (e.g. before the
 * scene has loaded). */
export function validateEdit(
  payload: EditPayload,
  knownMasks: string[] | null = null,
): FieldError[] {
  const errs: FieldError[] = [];
  const kind = payload.kind;
  if (typeof kind !== "string" || !EDIT_KINDS.includes(kind as EditKind)) {
    errs.push({
      field: "kind",
      message: `must be one of ${EDIT_KINDS.join(", ")}`,
    });
    return errs;
  }
  const quality = payload.quality ?? "preview";
  if (quality !== "preview" && quality !== "final") {
    errs.push({ field: "quality", message: "must be 'preview' or 'final'" });
  }
  const spp = payload.spp;
  if (spp !== undefined && spp !== null) {
    if (!Number.isInteger(spp) || (spp as number) < 1 || (spp as number) > 4096) {
      errs.push({ field: "spp", message: "must be an integer in [1, 4096]" });
    }
  }
  const seed = payload.seed;
  if (seed !== undefined && seed !== null && !Number.isInteger(seed)) {
    errs.push({ field: "seed", message: "must be an integer" });
  }
  const rawParams = payload.params ?? {};
  if (!isObject(rawParams)) {
    errs.push({ field: "params", message: "must be an object" });
    return errs;
  }
  const params = rawParams;

  if (kind === "opaque") {
    maskField(payload, knownMasks, errs);
    let any = false;
    for (const [op, lo, hi] of [
      ["set", 0, 1],
      ["offset", -1, 1],
    ] as const) {
      if (!(op in params)) continue;
      const group = params[op];
      if (!isObject(group)) {
        errs.push({ field: op, message: "must be an object" });
        continue;
      }
      any = true;
      for (const name of Object.keys(group)) {
        const field = `${op}.${name}`;
        if (!MAT_NAMES.includes(name)) {
          errs.push({ field, message: "unknown material map" });
          continue;
        }
        const v = group[name];
        if (name === "albedo" && Array.isArray(v)) {
          if (op === "set") rgb01Field(group, name, true, field, errs);
          else if (v.length !== 3 || !v.every((c) => inRange(c, lo, hi))) {
            errs.push({ field, message: `must be in [${lo}, ${hi}]` });
          }
        } else {
          numberField(group, name, lo, hi, true, field, errs);
        }
      }
    }
    if (!any) {
      errs.push({ field: "params", message: "opaque edit needs set/offset" });
    }
    return errs;
  }

  if (kind === "hsv") {
    maskField(payload, knownMasks, errs);
    numberField(params, "dh", -360, 360, false, "dh", errs);
    numberField(params, "ss", 0, 4, false, "ss", errs);
    numberField(params, "sv", 0, 4, false, "sv", errs);
    return errs;
  }

  if (kind === "relight") {
    numberField(params, "scale", 1e-3, 100, false, "scale", errs);
    return errs;
  }

  if (kind === "insert") {
    sphereField(params, errs);
    rgb01Field(params, "albedo", false, "albedo", errs);
    numberField(params, "roughness", 0, 1, false, "roughness", errs);
    numberField(params, "metallic", 0, 1, false, "metallic", errs);
    return errs;
  }

  // transparency
  maskField(payload, knownMasks, errs);
  numberField(params, "transmission", 0, 1, false, "transmission", errs);
  numberField(params, "eta", 0.1, 5, false, "eta", errs);
  rgb01Field(params, "a_bg", false, "a_bg", errs);
  if (isObject(params.sphere)) {
    const sph = params.sphere;
    const center = sph.center;
    const ok =
      Array.isArray(center) && center.length === 3 && center.every(isNum);
    if (!ok) {
      errs.push({
        field: "sphere.center",
        message: "must be 3 finite numbers",
      });
    }
    numberField(sph, "radius", 1e-3, 100, true, "sphere.radius", errs);
  } else {
    numberField(params, "d1_const", 0, 1e6, true, "d1_const", errs);
  }
  return errs;
}
