"""Direct-illumination Monte Carlo renderer over an equirectangular envmap.

One estimator core serves two callers: render_direct runs it on plain numpy
and render_direct_diff runs it with tape Vars substituted for the maps under
optimization; both walk the identical arithmetic, so primal values agree
bit for bit. Sampling decisions (light directions, pdfs, visibility, lobe
picks) are always taken from detached primal values, optionally from a
frozen sampling_env so that finite-difference probes see common random
numbers.

Envmap convention: equirectangular, phi = atan2(x, z) along columns, theta
= acos(y) along rows, texel (r, c) centered at ((c+.5)/W, (r+.5)/H).
"""

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .rng import u01
from .scene import EnvMap, ImageGrid
from .shading import disney_brdf_dots, sample_brdf, brdf_pdf, SurfaceParams
from .geometry import screen_dirs
from .bvh import occluded_batch, intersect_batch

_L_TEXEL, _L_PHI, _L_THETA = 11, 12, 13  # rng dims of a light sample
_B_LOBE, _B_U1, _B_U2 = 21, 22, 23       # rng dims of a brdf sample


@dataclass
class RenderSettings:
    spp: int = 16
    seed: int = 0
    max_light_samples: int = None
    use_mis: bool = False
    differentiable: bool = False
    sampling_env: EnvMap = None  # frozen importance map; defaults to env

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")

    @property
    def n_light(self):
        if self.max_light_samples is None:
            return self.spp
        return min(self.spp, self.max_light_samples)


@dataclass
class ShadingPoint:
    position: np.ndarray
    normal: np.ndarray
    screen: np.ndarray
    params: SurfaceParams


# ------------------------------------------------------------ envmap math

def texel_solid_angles(h, w):
    """Per-row texel solid angle dphi (cos t0 - cos t1); rows sum to 4pi."""
    edges = np.linspace(0.0, np.pi, h + 1)
    return (2.0 * np.pi / w) * (np.cos(edges[:-1]) - np.cos(edges[1:]))


def dir_to_uv(omega):
    """Unit directions -> fractional (u, v) in [0,1)x[0,1]."""
    omega = np.asarray(omega, dtype=np.float64)
    phi = np.arctan2(omega[..., 0], omega[..., 2])
    theta = np.arccos(np.clip(omega[..., 1], -1.0, 1.0))
    return np.mod(phi / (2.0 * np.pi) + 0.5, 1.0), theta / np.pi


def uv_to_dir(u, v):
    phi = (np.asarray(u) - 0.5) * 2.0 * np.pi
    theta = np.asarray(v) * np.pi
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), st * np.cos(phi)],
                    axis=-1)


def bilinear_weights(h, w, omega):
    """4 neighbor flat indices + weights for equirect bilinear lookup.

    Columns wrap around the longitude seam; rows clamp at the poles.
    """
    u, v = dir_to_uv(omega)
    x = u * w - 0.5
    y = v * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    c0 = np.mod(x0.astype(np.int64), w)
    c1 = np.mod(c0 + 1, w)
    r0 = np.clip(y0.astype(np.int64), 0, h - 1)
    r1 = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    idx = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
                   axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                    (1 - fx) * fy, fx * fy], axis=-1)
    return idx, wts


def _lookup_flat(env_flat, idx, wts):
    # env_flat: (T,3) numpy or Var; idx/wts: (...,4)
    g = tp.gather(env_flat, idx)          # (...,4,3)
    return tp.vsum(g * wts[..., None], axis=-2)


def envmap_lookup(env, omega):
    """Bilinear radiance lookup, continuous across the longitude seam."""
    flat = env.radiance.reshape(-1, 3).astype(np.float64)
    idx, wts = bilinear_weights(env.radiance.shape[0], env.radiance.shape[1],
                                omega)
    return _lookup_flat(flat, idx, wts)


class EnvSampler:
    """Piecewise-constant luminance * solid-angle importance sampler."""

    def __init__(self, env):
        rad = np.asarray(env.radiance, dtype=np.float64)
        self.h, self.w = rad.shape[:2]
        self.sa_row = texel_solid_angles(self.h, self.w)
        lum = rad @ np.array([0.2126, 0.7152, 0.0722])
        mass = lum * self.sa_row[:, None]
        total = mass.sum()
        if total <= 0:
            raise ValueError("cannot sample an all-zero envmap")
        self.prob = (mass / total).reshape(-1)   # per-texel pick probability
        self.cdf = np.cumsum(self.prob)
        self.cdf[-1] = 1.0
        cos_edges = np.cos(np.linspace(0.0, np.pi, self.h + 1))
        self.cos_top = cos_edges[:-1]
        self.cos_bot = cos_edges[1:]
        sa_flat = np.repeat(self.sa_row, self.w)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.pdf_texel = np.where(sa_flat > 0, self.prob / sa_flat, 0.0)

    def sample(self, u_texel, u_phi, u_theta):
        """(direction, pdf, texel) from three uniform streams."""
        t = np.searchsorted(self.cdf, u_texel, side="right")
        t = np.minimum(t, self.prob.size - 1)
        r, c = t // self.w, t % self.w
        u = (c + u_phi) / self.w
        cos_t = self.cos_top[r] + u_theta * (self.cos_bot[r] - self.cos_top[r])
        theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
        return uv_to_dir(u, theta / np.pi), self.pdf_texel[t], t

    def pdf(self, omega):
        """Solid-angle density of sample() at an arbitrary direction."""
        u, v = dir_to_uv(omega)
        c = np.minimum((u * self.w).astype(np.int64), self.w - 1)
        r = np.minimum((v * self.h).astype(np.int64), self.h - 1)
        return self.pdf_texel[r * self.w + c]


def sample_envmap(env, u):
    """u: (...,3) uniforms -> (directions, pdf)."""
    u = np.asarray(u, dtype=np.float64)
    s = EnvSampler(env)
    d, pdf, _ = s.sample(u[..., 0], u[..., 1], u[..., 2])
    return d, pdf


# ------------------------------------------------------- scene preparation

def _map_data(x):
    data = x.data if hasattr(x, "data") else x
    return np.asarray(data, dtype=np.float64)


def prepare_shading(bundle, bvh, mats=None, normals=None):
    """Trace primary rays at pixel centers and gather per-pixel shading
    inputs (position, normal, view direction, materials at the originating
    pixel). Returns a dict of flat (P,...) arrays."""
    cam = bundle.camera
    hgt, wid = bundle.height, bundle.width
    rr, cc = np.meshgrid(np.arange(hgt), np.arange(wid), indexing="ij")
    dirs = screen_dirs(cam, (cc + 0.5).reshape(-1), (rr + 0.5).reshape(-1))
    origin = np.broadcast_to(cam.origin, dirs.shape)
    t, tri, _, _ = intersect_batch(bvh, origin, dirs)
    hit = np.isfinite(t)
    pos = origin + np.where(hit, t, 0.0)[:, None] * dirs
    if normals is None:
        normals = bundle.normal_p
    if mats is None:
        mats = {k: bundle.material(k) for k in ("albedo", "roughness",
                                                "metallic")}
    return dict(
        positions=pos, hit=hit, view=-dirs, ray_dirs=dirs,
        normals=_map_data(normals).reshape(-1, 3),
        albedo=_map_data(mats["albedo"]).reshape(-1, 3),
        roughness=_map_data(mats["roughness"]).reshape(-1),
        metallic=_map_data(mats["metallic"]).reshape(-1),
        tri=tri, t=t, shape=(hgt, wid))


def _estimate(prep, bvh, env_flat, env_shape, sampler, settings,
              albedo, roughness, metallic):
    """Shared estimator: numpy in, numpy out; Vars in, Var out."""
    pos = prep["positions"]
    nrm = prep["normals"]
    view = prep["view"]
    hit = prep["hit"]
    p = pos.shape[0]
    eh, ew = env_shape
    seed = settings.seed
    pid = np.arange(p, dtype=np.uint64)
    ndo = np.sum(nrm * view, axis=1)

    rough1 = roughness.reshape(p, 1)
    metal1 = metallic.reshape(p, 1)

    n_l = settings.n_light
    acc = None
    for s in range(n_l):
        ut = u01(seed, pid, s, _L_TEXEL)
        up = u01(seed, pid, s, _L_PHI)
        uh = u01(seed, pid, s, _L_THETA)
        wi, pdf, _ = sampler.sample(ut, up, uh)
        ndi = np.sum(nrm * wi, axis=1)
        cos_i = np.maximum(ndi, 0.0)
        live = hit & (cos_i > 0.0) & (pdf > 0.0)
        vis = np.zeros(p, dtype=bool)
        if live.any():
            vis[live] = ~occluded_batch(bvh, pos[live], wi[live])
        h = wi + view
        h /= np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-300)
        f = disney_brdf_dots(ndi[:, None], ndo[:, None],
                             np.sum(nrm * h, axis=1)[:, None],
                             np.sum(h * view, axis=1)[:, None],
                             albedo, rough1, metal1)
        idx, wts = bilinear_weights(eh, ew, wi)
        rad = _lookup_flat(env_flat, idx, wts)
        wgt = np.where(live & vis, cos_i / np.maximum(pdf, 1e-300), 0.0)
        if settings.use_mis:
            pb = brdf_pdf(wi, view, nrm, SurfaceParams(
                albedo=np.zeros(3), roughness=prep["roughness"],
                metallic=prep["metallic"]))
            wgt = wgt * (pdf / np.maximum(pdf + pb, 1e-300))
        contrib = f * rad * wgt[:, None]
        acc = contrib if acc is None else acc + contrib
    out = acc * (1.0 / n_l)

    if settings.use_mis:
        bacc = None
        params = SurfaceParams(albedo=np.zeros(3), roughness=prep["roughness"],
                               metallic=prep["metallic"])
        for s in range(settings.spp):
            ub = np.stack([u01(seed, pid, s, _B_LOBE),
                           u01(seed, pid, s, _B_U1),
                           u01(seed, pid, s, _B_U2)], axis=-1)
            wi, pb, _, valid = sample_brdf(view, nrm, params, ub)
            ndi = np.sum(nrm * wi, axis=1)
            cos_i = np.maximum(ndi, 0.0)
            live = hit & valid & (cos_i > 0.0)
            vis = np.zeros(p, dtype=bool)
            if live.any():
                vis[live] = ~occluded_batch(bvh, pos[live], wi[live])
            pl = sampler.pdf(wi)
            h = wi + view
            h /= np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-300)
            f = disney_brdf_dots(ndi[:, None], ndo[:, None],
                                 np.sum(nrm * h, axis=1)[:, None],
                                 np.sum(h * view, axis=1)[:, None],
                                 albedo, rough1, metal1)
            idx, wts = bilinear_weights(eh, ew, wi)
            rad = _lookup_flat(env_flat, idx, wts)
            wgt = np.where(live & vis,
                           cos_i / np.maximum(pb, 1e-300)
                           * (pb / np.maximum(pb + pl, 1e-300)), 0.0)
            contrib = f * rad * wgt[:, None]
            bacc = contrib if bacc is None else bacc + contrib
        out = out + bacc * (1.0 / settings.spp)

    # miss pixels read the envmap straight through the pixel ray
    midx, mwts = bilinear_weights(eh, ew, prep["ray_dirs"])
    miss_rad = _lookup_flat(env_flat, midx, mwts)
    return tp.where(hit[:, None], out, miss_rad)


def render_direct(bundle, bvh, env, settings, mats=None, normals=None,
                  prep=None):
    """Primal deterministic MC render; returns an ImageGrid."""
    if prep is None:
        prep = prepare_shading(bundle, bvh, mats=mats, normals=normals)
    sampler = EnvSampler(settings.sampling_env or env)
    flat = np.asarray(env.radiance, dtype=np.float64).reshape(-1, 3)
    img = _estimate(prep, bvh, flat, env.radiance.shape[:2], sampler,
                    settings, prep["albedo"], prep["roughness"].reshape(-1, 1),
                    prep["metallic"].reshape(-1, 1))
    hgt, wid = prep["shape"]
    return ImageGrid.from_array(img.reshape(hgt, wid, 3))


def render_direct_diff(bundle, bvh, env, settings, tape, params, prep=None):
    """Differentiable render. params maps any of
    'albedo' (P,3) / 'roughness' (P,) / 'metallic' (P,) / 'env' (T,3)
    to Vars on the tape; unlisted quantities stay primal constants. Returns
    (flat (P,3) output Var, prep dict). MIS is a primal-only feature."""
    if settings.use_mis:
        raise ValueError("use_mis is not supported on the differentiable path")
    if not params:
        raise ValueError("no parameters registered on the tape")
    if prep is None:
        prep = prepare_shading(bundle, bvh)
    sampler = EnvSampler(settings.sampling_env or env)
    env_flat = params.get("env",
                          np.asarray(env.radiance, dtype=np.float64).reshape(-1, 3))
    albedo = params.get("albedo", prep["albedo"])
    rough = params.get("roughness", prep["roughness"])
    metal = params.get("metallic", prep["metallic"])
    p = prep["positions"].shape[0]
    out = _estimate(prep, bvh, env_flat, env.radiance.shape[:2], sampler,
                    settings, albedo, rough.reshape(p, 1),
                    metal.reshape(p, 1))
    return out, prep


# ----------------------------------------------------- light transport W

def build_light_matrix(prep, bvh, env_h, env_w, subsamples=2):
    """Dense per-channel transport W with L = W[c] @ E_flat[:, c].

    For every texel, `subsamples`^2 stratified directions are shaded
    (BRDF * cos * V * sa/k) and scattered onto the texel's 4 bilinear
    neighbors, so W @ E reproduces a bilinear-lookup quadrature render of
    the current materials exactly and is linear in E. Miss pixels receive
    plain bilinear ray-lookup rows. Returns (3, P, T) float64.
    """
    pos = prep["positions"]
    nrm = prep["normals"]
    view = prep["view"]
    hit = prep["hit"]
    p = pos.shape[0]
    t_count = env_h * env_w
    w_mat = np.zeros((3, p, t_count))
    ndo = np.sum(nrm * view, axis=1)
    rough1 = prep["roughness"].reshape(p, 1)
    metal1 = prep["metallic"].reshape(p, 1)
    sa_row = texel_solid_angles(env_h, env_w)
    k = subsamples * subsamples
    offs = [((i + 0.5) / subsamples, (j + 0.5) / subsamples)
            for i in range(subsamples) for j in range(subsamples)]
    for r in range(env_h):
        for c in range(env_w):
            for (ou, ov) in offs:
                wi = uv_to_dir((c + ou) / env_w, (r + ov) / env_h)
                ndi = nrm @ wi
                cos_i = np.maximum(ndi, 0.0)
                live = hit & (cos_i > 0.0)
                if not live.any():
                    continue
                vis = np.zeros(p, dtype=bool)
                vis[live] = ~occluded_batch(
                    bvh, pos[live], np.broadcast_to(wi, (live.sum(), 3)))
                h = wi + view
                h /= np.maximum(np.linalg.norm(h, axis=1, keepdims=True),
                                1e-300)
                f = disney_brdf_dots(ndi[:, None], ndo[:, None],
                                     np.sum(nrm * h, axis=1)[:, None],
                                     np.sum(h * view, axis=1)[:, None],
                                     prep["albedo"], rough1, metal1)
                wgt = np.where(live & vis, cos_i, 0.0) * (sa_row[r] / k)
                col = f * wgt[:, None]
                idx, wts = bilinear_weights(env_h, env_w, wi)
                for j in range(4):
                    w_mat[:, :, idx[j]] += (col * wts[j]).T
    miss = ~hit
    if miss.any():
        midx, mwts = bilinear_weights(env_h, env_w, prep["ray_dirs"][miss])
        rows = np.nonzero(miss)[0]
        for j in range(4):
            for ch in range(3):
                np.add.at(w_mat[ch], (rows, midx[:, j]), mwts[:, j])
    return w_mat
