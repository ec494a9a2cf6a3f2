"""Edit resolution: masked opaque material edits, HSV albedo recoloring,
relighting, object insertion with traced shadows, and single-view
transparency compositing with two straight-chord refractions.

Edits to the maps are strictly mask-local (exterior texels bit-identical);
rendered output outside a mask can only change through occlusion or shadows
introduced by inserted geometry.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .bvh import build_bvh, intersect_batch, occluded_batch
from .geometry import merge_meshes, screen_dirs, world_to_screen
from .render import (_L_PHI, _L_TEXEL, _L_THETA, EnvSampler, _lookup_flat,
                     bilinear_weights, prepare_shading, render_direct)
from .rng import u01
from .scene import ImageGrid
from .shading import (disney_diffuse_dots, fresnel_dielectric, ggx_ndf,
                      refract_dir, smith_g_dots)

KINDS = ("opaque", "hsv", "relight", "insert", "transparency")
MAP_NAMES = ("albedo", "roughness", "metallic")


@dataclass
class EditRequest:
    kind: str
    mask: str = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


@dataclass
class RefractionDistances:
    d1: np.ndarray           # (H, W) meters, zero outside the mask
    d2: np.ndarray
    source: str = "oracle"   # oracle | provided
    warnings: int = 0

    def __post_init__(self):
        self.d1 = np.asarray(self.d1, dtype=np.float64)
        self.d2 = np.asarray(self.d2, dtype=np.float64)
        for d in (self.d1, self.d2):
            if not np.all(np.isfinite(d)) or np.any(d < 0):
                raise ValueError("distances must be finite and >= 0")


@dataclass
class BackgroundAlbedo:
    grid: ImageGrid          # inpainted 3ch albedo behind the masked object

    @classmethod
    def from_array(cls, arr):
        return cls(grid=ImageGrid.from_array(arr))


def _mask_array(bundle, mask):
    """Mask by stored name or as a bool array; validates dimensions."""
    if isinstance(mask, str):
        if mask not in bundle.masks:
            raise KeyError(f"unknown mask {mask!r}")
        mask = bundle.masks[mask]
    m = np.asarray(mask)
    m = m.astype(bool) if m.dtype != bool else m
    if m.shape != (bundle.height, bundle.width):
        raise ValueError(f"mask shape {m.shape} does not match the bundle")
    return m


# ------------------------------------------------------------ opaque + hsv

def apply_opaque_edit(bundle, req):
    """Set and/or offset A/R/M inside the mask, clamped to [0,1]; texels
    outside the mask stay bit-identical. Set applies before offset."""
    if req.kind != "opaque":
        raise ValueError(f"opaque edit expected, got kind {req.kind!r}")
    m = _mask_array(bundle, req.mask)
    sets = req.params.get("set", {})
    offs = req.params.get("offset", {})
    for name in list(sets) + list(offs):
        if name not in MAP_NAMES:
            raise ValueError(f"unknown material map {name!r}")
    out = {}
    for name in MAP_NAMES:
        arr = bundle.material(name).data.copy()
        if name in sets:
            arr[m] = np.float32(sets[name])
        if name in offs:
            arr[m] = arr[m] + np.float32(offs[name])
        arr[m] = np.clip(arr[m], 0.0, 1.0)
        out[name + "_o"] = ImageGrid.from_array(arr)
    return dataclasses.replace(bundle, **out)


def rgb_to_hsv(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    d6 = np.where(diff > 0, 6.0 * diff, 1.0)
    h = np.select([diff == 0, mx == r, mx == g],
                  [0.0,
                   np.mod((g - b) / d6, 1.0),
                   (b - r) / d6 + 1.0 / 3.0],
                  default=(r - g) / d6 + 2.0 / 3.0)
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv):
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    k = np.mod(h, 1.0) * 6.0
    i = np.floor(k).astype(int) % 6
    f = k - np.floor(k)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def hsv_albedo_edit(bundle, mask, dh, ss, sv):
    """Rotate hue by dh degrees and scale saturation/value inside the mask."""
    m = _mask_array(bundle, mask)
    base = bundle.material("albedo")
    arr = base.data.copy()
    if m.any():
        hsv = rgb_to_hsv(base.f64()[m])
        hsv[:, 0] = np.mod(hsv[:, 0] + dh / 360.0, 1.0)
        hsv[:, 1] = np.clip(hsv[:, 1] * ss, 0.0, 1.0)
        hsv[:, 2] = hsv[:, 2] * sv
        arr[m] = np.float32(np.clip(hsv_to_rgb(hsv), 0.0, 1.0))
    return dataclasses.replace(bundle, albedo_o=ImageGrid.from_array(arr))


# --------------------------------------------------- relight and insertion

def relight(bundle, bvh, new_env, settings, prep=None):
    """Re-render the optimized maps under a replacement envmap."""
    return render_direct(bundle, bvh, new_env, settings, prep=prep)


def _tri_geom_normals(verts, tris, ids, view):
    a = verts[tris[ids, 0]]
    b = verts[tris[ids, 1]]
    c = verts[tris[ids, 2]]
    n = np.cross(b - a, c - a)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    flip = np.sum(n * view, axis=1) < 0.0
    return np.where(flip[:, None], -n, n)


def insert_object(bundle, bvh, obj_mesh, pose, params, settings, env=None):
    """Merge an object into the scene BVH and re-render under E*.

    Object pixels take the mesh geometric normal (camera-facing side) and
    the constant SurfaceParams; every other pixel keeps its maps and sample
    streams, so pixels the object neither covers nor shadows reproduce the
    baseline render bit for bit.
    """
    if env is None:
        env = bundle.envmap
    obj = obj_mesh.transformed(pose) if pose is not None else obj_mesh
    if obj.triangles.size == 0 or not np.all(np.isfinite(obj.vertices)):
        raise ValueError("degenerate insertion mesh")
    verts, tris, first_obj = merge_meshes(bvh.verts, bvh.tris, obj)
    merged = build_bvh(verts, tris)
    # keep the baseline shadow epsilon: a bounds change must not perturb
    # occlusion tests for untouched pixels
    merged.scene_diag = bvh.scene_diag
    prep = prepare_shading(bundle, merged)
    on_obj = prep["hit"] & (prep["tri"] >= first_obj)
    if on_obj.any():
        n = _tri_geom_normals(verts, tris, prep["tri"][on_obj],
                              prep["view"][on_obj])
        prep["normals"] = prep["normals"].copy()
        prep["albedo"] = prep["albedo"].copy()
        prep["roughness"] = prep["roughness"].copy()
        prep["metallic"] = prep["metallic"].copy()
        prep["normals"][on_obj] = n
        prep["albedo"][on_obj] = params.albedo
        prep["roughness"][on_obj] = params.roughness
        prep["metallic"][on_obj] = params.metallic
    return render_direct(bundle, merged, env, settings, prep=prep)


# ------------------------------------------------------------- transparency

def refraction_distance_oracle(obj_mesh, pose, cam, mask, hollow=False):
    """Exact straight-chord interface distances for each masked pixel.

    Marches the primary ray through the (posed) mesh collecting up to four
    interface crossings: d1 is the first glass span; d2 is the far-wall span
    for hollow objects and 0 for solid ones. Masked rays that miss leave
    zeros and bump the warning count.
    """
    obj = obj_mesh.transformed(pose) if pose is not None else obj_mesh
    ob = build_bvh(obj)
    m = np.asarray(mask).astype(bool)
    hgt, wid = m.shape
    d1 = np.zeros((hgt, wid))
    d2 = np.zeros((hgt, wid))
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        return RefractionDistances(d1, d2, source="oracle", warnings=0)
    dirs = screen_dirs(cam, cols + 0.5, rows + 0.5)
    eps = ob.shadow_eps
    origin = np.broadcast_to(cam.origin, dirs.shape).copy()
    cum = np.zeros(rows.size)
    ts = np.full((4, rows.size), np.nan)
    live = np.ones(rows.size, dtype=bool)
    for k in range(4):
        t, _, _, _ = intersect_batch(ob, origin, dirs)
        hit = live & np.isfinite(t)
        ts[k, hit] = cum[hit] + t[hit]
        live = hit
        if not live.any():
            break
        step = np.where(hit, t + eps, 0.0)
        origin = origin + step[:, None] * dirs
        cum = cum + step
    missed = np.isnan(ts[0])
    span1 = np.where(np.isnan(ts[1]), 0.0, ts[1] - ts[0])
    v1 = np.where(missed, 0.0, span1)
    if hollow:
        span2 = np.where(np.isnan(ts[3]) | np.isnan(ts[2]), 0.0,
                         ts[3] - ts[2])
        v2 = np.where(missed, 0.0, span2)
    else:
        v2 = np.zeros(rows.size)
    d1[rows, cols] = np.maximum(v1, 0.0)
    d2[rows, cols] = np.maximum(v2, 0.0)
    return RefractionDistances(d1, d2, source="oracle",
                               warnings=int(missed.sum()))


def _bilinear_image(arr, xs, ys):
    """Border-clamped bilinear fetch at continuous pixel coordinates."""
    hgt, wid = arr.shape[:2]
    gx = np.clip(xs - 0.5, 0.0, wid - 1.0)
    gy = np.clip(ys - 0.5, 0.0, hgt - 1.0)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, wid - 1)
    y1 = np.minimum(y0 + 1, hgt - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    return (arr[y0, x0] * (1 - fx) * (1 - fy) + arr[y0, x1] * fx * (1 - fy)
            + arr[y1, x0] * (1 - fx) * fy + arr[y1, x1] * fx * fy)


def transparency_composite(bundle, bvh, env, mask, glass, dists, a_bg,
                           settings, warnings=None):
    """Two-refraction glass compositing over the mask.

    Per masked pixel: refract the camera ray at the front surface with the
    predicted normal and the glass index, advance d1, refract again with the
    same normal (back face assumed parallel), advance d2, project the exit
    point to the screen and fetch the inpainted background albedo there.
    Shading mixes a diffuse transmission lobe with albedo
    A_glass = (1-M) * A_BG * T against the front GGX reflection, coupled by
    the exact dielectric Fresnel of the glass, so eta = 1 degenerates to the
    background-albedo diffuse render at the same pixel. Refraction paths
    that TIR keep only the reflection lobe. Exit points that project outside
    the image (or behind the camera) clamp to the border and are counted in
    the warnings dict when one is passed.
    """
    m = _mask_array(bundle, mask)
    base = render_direct(bundle, bvh, env, settings)
    if not m.any():
        return base
    prep = prepare_shading(bundle, bvh)
    mf = m.reshape(-1)
    sel = np.nonzero(mf)[0]
    pos = prep["positions"][sel]
    nrm = prep["normals"][sel]
    view = prep["view"][sel]
    wc = prep["ray_dirs"][sel]
    rough = prep["roughness"][sel]
    metal = prep["metallic"][sel]
    eta = glass.eta

    w1, ok1 = refract_dir(wc, nrm, 1.0 / eta)
    x1 = pos + dists.d1.reshape(-1)[sel, None] * w1
    w2, ok2 = refract_dir(w1, nrm, eta)
    x2 = x1 + dists.d2.reshape(-1)[sel, None] * w2
    tir = ~(ok1 & ok2)

    cam = bundle.camera
    xs = np.empty(sel.size)
    ys = np.empty(sel.size)
    local_z = ((x2 - cam.origin) @ cam.rotation)[:, 2]
    front = local_z > 1e-9
    if front.any():
        sc = world_to_screen(x2[front], cam)
        xs[front] = sc[:, 0]
        ys[front] = sc[:, 1]
    # behind-camera exit points fall back to the pixel's own position
    rows, cols = np.divmod(sel, bundle.width)
    xs[~front] = cols[~front] + 0.5
    ys[~front] = rows[~front] + 0.5
    off = (~front | (xs < 0.0) | (xs > bundle.width)
           | (ys < 0.0) | (ys > bundle.height))
    if warnings is not None:
        warnings["outside_screen"] = int(off.sum())
        warnings["tir"] = int(tir.sum())

    bg = getattr(a_bg, "grid", a_bg)
    bg = bg.f64() if isinstance(bg, ImageGrid) else np.asarray(bg, np.float64)
    a_glass = ((1.0 - metal)[:, None] * glass.transmission
               * _bilinear_image(bg, xs, ys))
    a_glass = np.where(tir[:, None], 0.0, a_glass)

    # light-sampled shading with the pixels' own sample streams
    sampler = EnvSampler(settings.sampling_env or env)
    flat = np.asarray(env.radiance, dtype=np.float64).reshape(-1, 3)
    eh, ew = env.radiance.shape[:2]
    ndo = np.sum(nrm * view, axis=1)
    acc = np.zeros((sel.size, 3))
    for s in range(settings.n_light):
        ut = u01(settings.seed, sel.astype(np.uint64), s, _L_TEXEL)
        up = u01(settings.seed, sel.astype(np.uint64), s, _L_PHI)
        uh = u01(settings.seed, sel.astype(np.uint64), s, _L_THETA)
        wi, pdf, _ = sampler.sample(ut, up, uh)
        ndi = np.sum(nrm * wi, axis=1)
        cos_i = np.maximum(ndi, 0.0)
        live = (cos_i > 0.0) & (pdf > 0.0)
        vis = np.zeros(sel.size, dtype=bool)
        if live.any():
            vis[live] = ~occluded_batch(bvh, pos[live], wi[live])
        h = wi + view
        h /= np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-300)
        hdo = np.sum(h * view, axis=1)
        f_s = fresnel_dielectric(hdo, eta)[:, None]
        diff = disney_diffuse_dots(ndi[:, None], ndo[:, None], hdo[:, None],
                                   a_glass, rough[:, None])
        spec = (ggx_ndf(np.sum(nrm * h, axis=1), rough)
                * smith_g_dots(np.abs(ndi), np.abs(ndo), rough)
                / np.maximum(4.0 * np.abs(ndi) * np.abs(ndo), 1e-12))
        f = (1.0 - f_s) * diff + f_s * spec[:, None]
        idx, wts = bilinear_weights(eh, ew, wi)
        rad = _lookup_flat(flat, idx, wts)
        wgt = np.where(live & vis, cos_i / np.maximum(pdf, 1e-300), 0.0)
        acc += f * rad * wgt[:, None]
    acc /= settings.n_light

    out = base.f64().reshape(-1, 3)
    out[sel] = acc
    return ImageGrid.from_array(out.reshape(bundle.height, bundle.width, 3))
