"""Simplified Disney BRDF, glass BSDF, refraction, and importance sampling.

f_r = f_s + (1-M) f_d with the modified Schlick Fresnel
(C0 = R0(eta)(1-M) + M*A), GGX D under the alpha = roughness^2 remap
(alpha floored at 1e-3 for gradient stability), separable
height-uncorrelated Smith G, and the two-F_d Disney diffuse. No sheen, no
clearcoat, no anisotropy.

Every *_dots core takes precomputed dot products (arrays broadcast against
material channels on the last axis) and runs on plain numpy or tape Vars,
so the renderer's primal and differentiable passes share one code path.
Vector-argument wrappers implement the single-configuration API.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp

ALPHA_FLOOR = 1e-3


@dataclass
class SurfaceParams:
    albedo: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))
    roughness: float = 0.5
    metallic: float = 0.0
    eta: float = 1.5

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class GlassParams:
    transmission: float = 1.0
    eta: float = 1.5
    background_albedo: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1.0, 1.0]))

    def __post_init__(self):
        self.background_albedo = np.asarray(self.background_albedo,
                                            dtype=np.float64)
        if not (0.0 <= self.transmission <= 1.0):
            raise ValueError("transmission must lie in [0,1]")


@dataclass
class LobeSample:
    direction: np.ndarray
    pdf: float
    lobe: str  # diffuse | specular
    valid: bool = True


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def r0_from_eta(eta):
    return ((eta - 1.0) / (eta + 1.0)) ** 2


def alpha_of(roughness):
    # Disney perceptual remap with a floor that keeps derivatives bounded
    return tp.maximum(roughness * roughness, ALPHA_FLOOR)


def ggx_ndf(n_dot_h, roughness):
    """GGX D with alpha = roughness^2; zero for back-facing half vectors."""
    a = alpha_of(roughness)
    a2 = a * a
    c = tp.clip(n_dot_h, -1.0, 1.0)
    denom = c * c * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * denom * denom)
    face = tp.value_of(n_dot_h) > 0.0
    return tp.where(face, d, d * 0.0)


def _smith_g1(n_dot_w, alpha):
    # height-uncorrelated GGX masking for one direction
    c = tp.clip(n_dot_w, 1e-9, 1.0)
    a2 = alpha * alpha
    return 2.0 * c / (c + tp.sqrt(a2 + (1.0 - a2) * c * c))


def smith_g_dots(n_dot_i, n_dot_o, roughness):
    a = alpha_of(roughness)
    return _smith_g1(n_dot_i, a) * _smith_g1(n_dot_o, a)


def smith_g(omega_i, omega_o, n, roughness):
    """Separable Smith G in [0,1]; 1 in the smooth limit off grazing."""
    return smith_g_dots(_dot(omega_i, n), _dot(omega_o, n), roughness)


def schlick(c0, cos_theta):
    m = tp.clip(1.0 - cos_theta, 0.0, 1.0)
    return c0 + (1.0 - c0) * m ** 5.0


def fresnel_terms_dots(h_dot_o, albedo, roughness, metallic, eta):
    """(F_s, C0) with C0 = R0(eta)(1-M) + M*A; albedo carries the channel
    axis, scalar inputs broadcast."""
    r0 = r0_from_eta(eta)
    c0 = r0 * (1.0 - metallic) + metallic * albedo
    return schlick(c0, h_dot_o), c0


def fresnel_terms(omega_i, omega_o, params):
    h_raw = np.asarray(omega_i, dtype=np.float64) + np.asarray(omega_o, dtype=np.float64)
    nrm = np.linalg.norm(h_raw, axis=-1)
    if np.any(nrm < 1e-12):
        raise ValueError("degenerate half vector: omega_i == -omega_o")
    h = h_raw / nrm[..., None]
    hdo = _dot(h, np.asarray(omega_o, dtype=np.float64))
    return fresnel_terms_dots(hdo[..., None], params.albedo, params.roughness,
                              params.metallic, params.eta)


def disney_diffuse_dots(n_dot_i, n_dot_o, h_dot, albedo, roughness):
    """(A/pi) F_d(w_i) F_d(w_o) with F_D90 = 0.5 + 2 R (h.w)^2; h_dot is the
    half-vector/light angle (equal for both directions)."""
    fd90 = 0.5 + 2.0 * roughness * h_dot * h_dot
    fi = 1.0 + (fd90 - 1.0) * tp.clip(1.0 - n_dot_i, 0.0, 1.0) ** 5.0
    fo = 1.0 + (fd90 - 1.0) * tp.clip(1.0 - n_dot_o, 0.0, 1.0) ** 5.0
    return (albedo / np.pi) * fi * fo


def disney_diffuse(omega_i, omega_o, n, params):
    h = _normalize(np.asarray(omega_i, dtype=np.float64)
                   + np.asarray(omega_o, dtype=np.float64))
    ndi = _dot(n, omega_i)
    ndo = _dot(n, omega_o)
    hdi = _dot(h, omega_i)
    return disney_diffuse_dots(ndi[..., None], ndo[..., None], hdi[..., None],
                               params.albedo, params.roughness)


def disney_brdf_dots(n_dot_i, n_dot_o, n_dot_h, h_dot_o,
                     albedo, roughness, metallic, eta=1.5):
    """f_r = F_s D G / (4 |n.wi| |n.wo|) + (1-M) f_d, per channel.

    Dot inputs must already carry a trailing singleton axis when albedo has
    a channel axis. Returns zero where either direction is below the
    hemisphere (the contract, not an error).
    """
    fs, _ = fresnel_terms_dots(h_dot_o, albedo, roughness, metallic, eta)
    d = ggx_ndf(n_dot_h, roughness)
    g = smith_g_dots(n_dot_i, n_dot_o, roughness)
    denom = 4.0 * tp.maximum(tp.absval(n_dot_i) * tp.absval(n_dot_o), 1e-12)
    spec = fs * d * g / denom
    diff = disney_diffuse_dots(n_dot_i, n_dot_o, h_dot_o, albedo, roughness)
    f = spec + (1.0 - metallic) * diff
    up = (tp.value_of(n_dot_i) > 0.0) & (tp.value_of(n_dot_o) > 0.0)
    return tp.where(up, f, f * 0.0)


def disney_brdf_eval(omega_i, omega_o, n, params):
    """Single/batch vector API over SurfaceParams; channels on the last axis."""
    omega_i = np.asarray(omega_i, dtype=np.float64)
    omega_o = np.asarray(omega_o, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    h = _normalize(omega_i + omega_o)
    ndi = _dot(n, omega_i)[..., None]
    ndo = _dot(n, omega_o)[..., None]
    ndh = _dot(n, h)[..., None]
    hdo = _dot(h, omega_o)[..., None]
    return disney_brdf_dots(ndi, ndo, ndh, hdo, params.albedo,
                            params.roughness, params.metallic, params.eta)


def onb(n):
    """Deterministic orthonormal basis (t1, t2) for unit normal(s) n."""
    n = np.asarray(n, dtype=np.float64)
    s = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (s + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t1 = np.stack([1.0 + s * n[..., 0] ** 2 * a, s * b, -s * n[..., 0]], axis=-1)
    t2 = np.stack([b, s + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t1, t2


def spec_lobe_prob(n_dot_o, metallic, eta):
    """Fresnel-weighted lobe heuristic: metals always sample specular,
    dielectrics by their Schlick reflectance at the view angle."""
    f = schlick(r0_from_eta(eta), n_dot_o)
    return np.clip(metallic + (1.0 - metallic) * f, 0.0, 1.0)


def brdf_pdf(omega_i, omega_o, n, params):
    """Mixture pdf of sample_brdf for an arbitrary direction (solid angle)."""
    omega_i = np.asarray(omega_i, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    ndi = _dot(n, omega_i)
    h = _normalize(omega_i + omega_o)
    ndh = _dot(n, h)
    hdo = _dot(h, omega_o)
    pdf_cos = np.maximum(ndi, 0.0) / np.pi
    d = tp.value_of(ggx_ndf(ndh, params.roughness))
    pdf_spec = np.where(hdo > 1e-9, d * np.maximum(ndh, 0.0) / (4.0 * np.abs(hdo) + 1e-12), 0.0)
    ps = spec_lobe_prob(_dot(n, omega_o), params.metallic, params.eta)
    return ps * pdf_spec + (1.0 - ps) * pdf_cos


def sample_brdf(omega_o, n, params, u):
    """Draw one incident direction per row of u (u: [...,3] uniforms).

    Lobe choice: u[...,0] against the Fresnel-weighted heuristic; diffuse is
    cosine-hemisphere, specular reflects omega_o about a GGX-NDF-sampled
    half vector. pdf is the analytic mixture. Samples falling below the
    horizon come back with valid=False (estimators weight them zero).
    """
    omega_o = np.asarray(omega_o, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if omega_o.ndim == 1:
        omega_o = np.broadcast_to(omega_o, (u.shape[0], 3))
        n = np.broadcast_to(n, (u.shape[0], 3))
    ps = np.broadcast_to(spec_lobe_prob(_dot(n, omega_o), params.metallic,
                                        params.eta), u.shape[0]).copy()
    pick_spec = u[:, 0] < ps
    t1, t2 = onb(n)

    # cosine hemisphere
    phi = 2.0 * np.pi * u[:, 1]
    r = np.sqrt(u[:, 2])
    zd = np.sqrt(np.maximum(1.0 - u[:, 2], 0.0))
    d_diff = (t1 * (r * np.cos(phi))[:, None] + t2 * (r * np.sin(phi))[:, None]
              + n * zd[:, None])

    # GGX NDF half-vector sample, then mirror omega_o
    a = np.asarray(tp.value_of(alpha_of(params.roughness)), dtype=np.float64)
    cos_h = np.sqrt(np.maximum((1.0 - u[:, 2]) / (1.0 + (a * a - 1.0) * u[:, 2]),
                               0.0))
    sin_h = np.sqrt(np.maximum(1.0 - cos_h ** 2, 0.0))
    h = (t1 * (sin_h * np.cos(phi))[:, None] + t2 * (sin_h * np.sin(phi))[:, None]
         + n * cos_h[:, None])
    d_spec = 2.0 * _dot(omega_o, h)[:, None] * h - omega_o

    d = np.where(pick_spec[:, None], d_spec, d_diff)
    d = _normalize(d)
    ndi = _dot(n, d)
    valid = ndi > 1e-9
    pdf = brdf_pdf(d, omega_o, n, params)
    valid &= pdf > 1e-12
    if single:
        lobe = "specular" if pick_spec[0] else "diffuse"
        return LobeSample(d[0], float(pdf[0]), lobe, bool(valid[0]))
    return d, pdf, pick_spec, valid


def refract_dir(omega, n, eta):
    """Snell refraction of propagation direction omega at a surface with
    normal n; eta = n_incident / n_transmitted (GLSL convention). n may
    point to either side: it is flipped to the incident side internally.
    Returns (direction, valid) vectorized; scalar input returns None on TIR.
    """
    omega = np.asarray(omega, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    single = omega.ndim == 1
    omega = np.atleast_2d(omega)
    n = np.atleast_2d(np.broadcast_to(n, omega.shape))
    cosi = -_dot(omega, n)
    flip = cosi < 0.0
    n = np.where(flip[:, None], -n, n)
    cosi = np.abs(cosi)
    k = 1.0 - eta * eta * (1.0 - cosi * cosi)
    valid = k >= 0.0
    k = np.maximum(k, 0.0)
    d = eta * omega + (eta * cosi - np.sqrt(k))[:, None] * n
    d = np.where(valid[:, None], d, 0.0)
    nrm = np.linalg.norm(d, axis=1, keepdims=True)
    d = d / np.where(nrm > 0, nrm, 1.0)
    if single:
        return d[0] if valid[0] else None
    return d, valid


def fresnel_dielectric(cos_i, eta):
    """Exact unpolarized dielectric Fresnel reflectance; eta is the
    transmitted-over-incident relative index. Identically 0 at eta=1."""
    cos_i = np.clip(np.abs(np.asarray(cos_i, dtype=np.float64)), 0.0, 1.0)
    if eta == 1.0:
        return np.zeros_like(cos_i)
    sin2_t = (1.0 - cos_i ** 2) / (eta ** 2)
    tir = sin2_t > 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin2_t, 0.0))
    rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t + 1e-300)
    rp = (eta * cos_i - cos_t) / (eta * cos_i + cos_t + 1e-300)
    f = 0.5 * (rs ** 2 + rp ** 2)
    return np.where(tir, 1.0, f)


def glass_bsdf_eval(omega_i, omega_o, n, glass, metallic, roughness=1.0):
    """Transmission BSDF
    f_glass = sqrt(A_glass)(1-F_s) D G |h.wo||h.wi| /
              (|n.wi||n.wo| (h.wi + eta h.wo)^2),
    A_glass = (1-M) A_BG T, with the refraction half vector
    h ~ normalize(w_i + eta w_o) oriented to the n side. eta is the ratio
    on the transmitted side of the interface. Directions must lie on
    opposite sides of the surface (transmission configuration); the
    reflection configuration evaluates to zero. roughness defaults to 1
    (the diffuse-like transmission lobe used for compositing).
    """
    omega_i = np.asarray(omega_i, dtype=np.float64)
    single = omega_i.ndim == 1
    omega_i = np.atleast_2d(omega_i)
    omega_o = np.atleast_2d(np.asarray(omega_o, dtype=np.float64))
    n = np.atleast_2d(np.asarray(n, dtype=np.float64))
    omega_o = np.broadcast_to(omega_o, omega_i.shape)
    n = np.broadcast_to(n, omega_i.shape)
    eta = glass.eta
    a_glass = (1.0 - metallic) * glass.background_albedo * glass.transmission

    ndi = _dot(n, omega_i)
    ndo = _dot(n, omega_o)
    transmit = (ndi * ndo) < 0.0

    h = omega_i + eta * omega_o
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    # orient h to the n hemisphere so D(n.h) is meaningful
    h = h * np.where(_dot(h, n) >= 0.0, 1.0, -1.0)[:, None]
    hdi = _dot(h, omega_i)
    hdo = _dot(h, omega_o)

    fs, _ = fresnel_terms_dots(np.abs(hdo)[:, None], a_glass, roughness,
                               metallic, eta)
    d = tp.value_of(ggx_ndf(_dot(n, h), roughness))
    g = tp.value_of(smith_g_dots(np.abs(ndi), np.abs(ndo), roughness))
    denom = np.abs(ndi) * np.abs(ndo) * (hdi + eta * hdo) ** 2
    val = (np.sqrt(a_glass) * (1.0 - fs) * (d * g * np.abs(hdo) * np.abs(hdi)
           / np.maximum(denom, 1e-300))[:, None])
    out = np.where(transmit[:, None], val, 0.0)
    return out[0] if single else out
