"""BRDF/BSDF tests against straight-line scalar re-implementations and
hemisphere quadrature. The reference functions below are written directly
from the closed-form expressions, scalar and branchy on purpose: they share
no code with the vectorized implementations they check.
"""

import numpy as np
import pytest

from materialist import shading as sh
from materialist import tape as tp


# ---------------------------------------------------------------- oracles

def ref_brdf(wi, wo, n, A, R, M, eta=1.5):
    ndi = float(np.dot(n, wi))
    ndo = float(np.dot(n, wo))
    if ndi <= 0 or ndo <= 0:
        return np.zeros(3)
    h = wi + wo
    h = h / np.linalg.norm(h)
    ndh = float(np.dot(n, h))
    hdo = float(np.dot(h, wo))
    a = max(R * R, 1e-3)
    a2 = a * a
    r0 = ((eta - 1) / (eta + 1)) ** 2
    c0 = r0 * (1 - M) + M * np.asarray(A, float)
    fs = c0 + (1 - c0) * max(1 - hdo, 0.0) ** 5
    d = a2 / (np.pi * (ndh * ndh * (a2 - 1) + 1) ** 2) if ndh > 0 else 0.0
    def g1(c):
        c = min(max(c, 1e-9), 1.0)
        return 2 * c / (c + np.sqrt(a2 + (1 - a2) * c * c))
    g = g1(ndi) * g1(ndo)
    spec = fs * d * g / (4 * max(abs(ndi) * abs(ndo), 1e-12))
    fd90 = 0.5 + 2 * R * hdo * hdo
    fdi = 1 + (fd90 - 1) * max(1 - ndi, 0.0) ** 5
    fdo = 1 + (fd90 - 1) * max(1 - ndo, 0.0) ** 5
    diff = np.asarray(A, float) / np.pi * fdi * fdo
    return spec + (1 - M) * diff


def ref_glass(wi, wo, n, T, eta, A_bg, M, R):
    ndi = float(np.dot(n, wi))
    ndo = float(np.dot(n, wo))
    if ndi * ndo >= 0:
        return np.zeros(3)
    a_glass = (1 - M) * np.asarray(A_bg, float) * T
    h = wi + eta * wo
    h = h / np.linalg.norm(h)
    if np.dot(h, n) < 0:
        h = -h
    ndh = float(np.dot(n, h))
    hdi = float(np.dot(h, wi))
    hdo = float(np.dot(h, wo))
    a = max(R * R, 1e-3)
    a2 = a * a
    d = a2 / (np.pi * (ndh * ndh * (a2 - 1) + 1) ** 2) if ndh > 0 else 0.0
    def g1(c):
        c = min(max(c, 1e-9), 1.0)
        return 2 * c / (c + np.sqrt(a2 + (1 - a2) * c * c))
    g = g1(abs(ndi)) * g1(abs(ndo))
    r0 = ((eta - 1) / (eta + 1)) ** 2
    c0 = r0 * (1 - M) + M * a_glass
    fs = c0 + (1 - c0) * max(1 - abs(hdo), 0.0) ** 5
    return (np.sqrt(a_glass) * (1 - fs) * d * g * abs(hdo) * abs(hdi)
            / max(abs(ndi) * abs(ndo) * (hdi + eta * hdo) ** 2, 1e-300))


def hemi_dirs(rng, k, sign=1.0):
    v = rng.normal(size=(k, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = sign * np.abs(v[:, 2])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def furnace_quadrature(wo, n, params, nmu=96, nphi=192):
    nodes, weights = np.polynomial.legendre.leggauss(nmu)
    mu = 0.5 * (nodes + 1.0)
    wmu = 0.5 * weights
    phis = (np.arange(nphi) + 0.5) / nphi * 2 * np.pi
    st = np.sqrt(1 - mu ** 2)
    wi = np.stack([np.outer(st, np.cos(phis)), np.outer(st, np.sin(phis)),
                   np.broadcast_to(mu[:, None], (nmu, nphi)).copy()], axis=-1)
    f = sh.disney_brdf_eval(wi.reshape(-1, 3), wo, n, params).reshape(nmu, nphi, 3)
    w = (wmu * mu)[:, None, None] * (2 * np.pi / nphi)
    return (f * w).sum(axis=(0, 1))


Z = np.array([0.0, 0.0, 1.0])


# ------------------------------------------------------- scalar equality

def test_brdf_matches_scalar_reference():
    rng = np.random.default_rng(7)
    wi = hemi_dirs(rng, 1000)
    wo = hemi_dirs(rng, 1000)
    A = rng.uniform(0, 1, size=(1000, 3))
    R = rng.uniform(0, 1, size=1000)
    M = rng.uniform(0, 1, size=1000)
    worst = 0.0
    for k in range(1000):
        p = sh.SurfaceParams(albedo=A[k], roughness=R[k], metallic=M[k])
        got = sh.disney_brdf_eval(wi[k], wo[k], Z, p)
        want = ref_brdf(wi[k], wo[k], Z, A[k], R[k], M[k])
        worst = max(worst, np.abs(got - want).max())
    assert worst < 1e-12


def test_brdf_fixed_configuration():
    p = sh.SurfaceParams(albedo=np.ones(3), roughness=0.5, metallic=0.0)
    got = sh.disney_brdf_eval(Z, Z, Z, p)
    want = ref_brdf(Z, Z, Z, np.ones(3), 0.5, 0.0)
    assert np.abs(got - want).max() < 1e-12


def test_glass_matches_scalar_reference():
    rng = np.random.default_rng(11)
    wo = hemi_dirs(rng, 1000)           # viewer above
    wi = hemi_dirs(rng, 1000, sign=-1)  # light through the surface
    T = rng.uniform(0, 1, size=1000)
    M = rng.uniform(0, 1, size=1000)
    R = rng.uniform(0.05, 1, size=1000)
    A = rng.uniform(0, 1, size=(1000, 3))
    etas = rng.choice([1.1, 1.5, 2.0], size=1000)
    worst = 0.0
    for k in range(1000):
        gp = sh.GlassParams(transmission=T[k], eta=etas[k], background_albedo=A[k])
        got = sh.glass_bsdf_eval(wi[k], wo[k], Z, gp, M[k], roughness=R[k])
        want = ref_glass(wi[k], wo[k], Z, T[k], etas[k], A[k], M[k], R[k])
        worst = max(worst, np.abs(got - want).max())
    assert worst < 1e-12


def test_glass_trivial_zeros():
    gp0 = sh.GlassParams(transmission=0.0, eta=1.5, background_albedo=np.ones(3))
    wi = np.array([0.3, 0.1, -0.9])
    wi /= np.linalg.norm(wi)
    wo = np.array([-0.2, 0.4, 0.8])
    wo /= np.linalg.norm(wo)
    assert np.all(sh.glass_bsdf_eval(wi, wo, Z, gp0, 0.2) == 0.0)
    gp = sh.GlassParams(transmission=1.0, eta=1.5, background_albedo=np.ones(3))
    assert np.all(sh.glass_bsdf_eval(wi, wo, Z, gp, 1.0) == 0.0)
    # reflection configuration: both directions above the surface
    assert np.all(sh.glass_bsdf_eval(np.abs(wi), wo, Z, gp, 0.0) == 0.0)


# ----------------------------------------------------------- energy, D, G

def test_white_furnace_grid():
    for cto in (1.0, 0.9, 0.8):
        sto = np.sqrt(1 - cto * cto)
        wo = np.array([sto, 0.0, cto])
        for R in np.linspace(0.05, 1.0, 5):
            for M in np.linspace(0.0, 1.0, 5):
                p = sh.SurfaceParams(albedo=np.ones(3), roughness=R, metallic=M)
                alb = furnace_quadrature(wo, Z, p)
                assert alb.max() <= 1.05, (cto, R, M, alb)


def test_ggx_peak_value():
    # alpha=1 makes the distribution uniform: D = 1/pi everywhere
    assert np.isclose(float(sh.ggx_ndf(np.float64(1.0), 1.0)), 1.0 / np.pi,
                      rtol=1e-12)
    assert float(sh.ggx_ndf(np.float64(-0.2), 0.5)) == 0.0


def test_ggx_projected_integral_is_one():
    nodes, weights = np.polynomial.legendre.leggauss(512)
    mu = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    for R in (0.3, 0.6, 1.0):
        d = tp.value_of(sh.ggx_ndf(mu, R))
        total = 2 * np.pi * np.sum(w * d * mu)
        assert abs(total - 1.0) < 1e-2, (R, total)


def test_smith_g_limits():
    wo = np.array([0.0, 0.6, 0.8])
    wi = np.array([0.6, 0.0, 0.8])
    assert sh.smith_g(wi, wo, Z, 0.0) > 0.999
    gs = [sh.smith_g(wi, wo, Z, r) for r in (0.2, 0.5, 0.8, 1.0)]
    assert all(0.0 < g <= 1.0 for g in gs)
    assert all(a > b for a, b in zip(gs, gs[1:]))  # rougher masks more
    assert np.isclose(sh.smith_g(wi, wo, Z, 0.7), sh.smith_g(wo, wi, Z, 0.7),
                      rtol=1e-14)


# ------------------------------------------------------------ fresnel

def test_fresnel_examples():
    p = sh.SurfaceParams(albedo=np.array([0.7, 0.2, 0.1]), roughness=0.4,
                         metallic=0.0, eta=1.5)
    fs, c0 = sh.fresnel_terms(Z, Z, p)
    assert np.allclose(c0, 0.04, atol=1e-12)
    assert np.allclose(fs, 0.04, atol=1e-12)
    pm = sh.SurfaceParams(albedo=np.array([0.7, 0.2, 0.1]), roughness=0.4,
                          metallic=1.0)
    _, c0m = sh.fresnel_terms(Z, Z, pm)
    assert np.allclose(c0m, pm.albedo, atol=1e-12)
    # grazing half-vector: h.wo -> 0 drives Schlick to 1
    wo = np.array([1.0, 0.0, 1e-8])
    wo /= np.linalg.norm(wo)
    wi = np.array([-1.0, 0.0, 1e-8])
    wi /= np.linalg.norm(wi)
    fs_g, _ = sh.fresnel_terms(wi, wo, p)
    assert np.all(fs_g > 0.999)


def test_fresnel_degenerate_raises():
    p = sh.SurfaceParams()
    with pytest.raises(ValueError):
        sh.fresnel_terms(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), p)


def test_fresnel_dielectric_exact():
    assert np.all(sh.fresnel_dielectric(np.linspace(0, 1, 11), 1.0) == 0.0)
    r0 = ((1.5 - 1) / (1.5 + 1)) ** 2
    assert np.isclose(float(sh.fresnel_dielectric(1.0, 1.5)), r0, rtol=1e-12)
    assert float(sh.fresnel_dielectric(1e-9, 1.5)) > 0.999
    # exiting the dense side beyond the critical angle reflects totally
    crit = np.sqrt(1 - (1 / 1.5) ** 2)  # cos of critical angle
    assert float(sh.fresnel_dielectric(crit * 0.9, 1 / 1.5)) == 1.0


def test_diffuse_normal_incidence():
    p = sh.SurfaceParams(albedo=np.array([0.8, 0.5, 0.3]), roughness=0.0)
    got = sh.disney_diffuse(Z, Z, Z, p)
    assert np.allclose(got, p.albedo / np.pi, rtol=1e-14)


# ------------------------------------------------------------ properties

def test_reciprocity_and_nonnegativity():
    rng = np.random.default_rng(3)
    wi = hemi_dirs(rng, 200)
    wo = hemi_dirs(rng, 200)
    for k in range(200):
        p = sh.SurfaceParams(albedo=rng.uniform(0, 1, 3),
                             roughness=rng.uniform(0, 1),
                             metallic=rng.uniform(0, 1))
        a = sh.disney_brdf_eval(wi[k], wo[k], Z, p)
        b = sh.disney_brdf_eval(wo[k], wi[k], Z, p)
        assert np.abs(a - b).max() < 1e-12
        assert np.all(a >= 0)


def test_lower_hemisphere_is_zero():
    p = sh.SurfaceParams()
    below = np.array([0.1, 0.2, -0.97])
    below /= np.linalg.norm(below)
    above = np.array([0.0, 0.0, 1.0])
    assert np.all(sh.disney_brdf_eval(below, above, Z, p) == 0.0)
    assert np.all(sh.disney_brdf_eval(above, below, Z, p) == 0.0)
    assert np.all(sh.disney_brdf_eval(below, below, Z, p) == 0.0)


def test_metallic_kills_diffuse():
    wi = np.array([0.3, 0.2, 0.93])
    wi /= np.linalg.norm(wi)
    wo = np.array([-0.1, 0.4, 0.91])
    wo /= np.linalg.norm(wo)
    a = np.array([0.6, 0.3, 0.2])
    pm = sh.SurfaceParams(albedo=a, roughness=0.5, metallic=1.0)
    got = sh.disney_brdf_eval(wi, wo, Z, pm)
    h = (wi + wo) / np.linalg.norm(wi + wo)
    fs = a + (1 - a) * (1 - np.dot(h, wo)) ** 5
    dg = (tp.value_of(sh.ggx_ndf(np.dot(Z, h), 0.5))
          * sh.smith_g(wi, wo, Z, 0.5))
    want = fs * dg / (4 * np.dot(Z, wi) * np.dot(Z, wo))
    assert np.allclose(got, want, rtol=1e-12)


def test_param_gradients_match_fd():
    """Tape derivatives of f_r w.r.t. A, R, M vs central differences."""
    rng = np.random.default_rng(19)
    k = 1000
    wi = hemi_dirs(rng, k)
    wo = hemi_dirs(rng, k)
    keep = (wi[:, 2] > 0.05) & (wo[:, 2] > 0.05)
    wi, wo = wi[keep], wo[keep]
    k = wi.shape[0]
    h = wi + wo
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    dots = dict(n_dot_i=wi[:, 2:3], n_dot_o=wo[:, 2:3],
                n_dot_h=h[:, 2:3], h_dot_o=np.sum(h * wo, axis=1)[:, None])
    A0 = rng.uniform(0.1, 0.9, size=3)
    R0 = np.float64(0.45)
    M0 = np.float64(0.3)
    wgt = rng.uniform(0.5, 1.5, size=(k, 3))

    def loss(A, R, M):
        f = sh.disney_brdf_dots(albedo=A, roughness=R, metallic=M, **dots)
        return tp.vsum(f * wgt)

    t = tp.Tape()
    vA, vR, vM = t.var(A0), t.var(R0), t.var(M0)
    out = loss(vA, vR, vM)
    g = t.backward(out)

    eps = 1e-4
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        fd = (loss(A0 + e, R0, M0) - loss(A0 - e, R0, M0)) / (2 * eps)
        assert abs(g[vA][i] - fd) / (abs(fd) + 1e-12) < 1e-3
    fdr = (loss(A0, R0 + eps, M0) - loss(A0, R0 - eps, M0)) / (2 * eps)
    fdm = (loss(A0, R0, M0 + eps) - loss(A0, R0, M0 - eps)) / (2 * eps)
    assert abs(float(g[vR]) - fdr) / (abs(fdr) + 1e-12) < 1e-3
    assert abs(float(g[vM]) - fdm) / (abs(fdm) + 1e-12) < 1e-3
    # primal and taped values agree exactly
    assert float(tp.value_of(out)) == loss(A0, R0, M0)


# ------------------------------------------------------------- sampling

def test_metallic_always_samples_specular():
    rng = np.random.default_rng(5)
    p = sh.SurfaceParams(albedo=np.ones(3) * 0.9, roughness=0.3, metallic=1.0)
    wo = np.array([0.2, -0.1, 0.97])
    wo /= np.linalg.norm(wo)
    u = rng.uniform(size=(4096, 3))
    _, _, pick_spec, _ = sh.sample_brdf(wo, Z, p, u)
    assert pick_spec.all()


def test_sample_pdf_matches_histogram():
    rng = np.random.default_rng(23)
    p = sh.SurfaceParams(albedo=np.full(3, 0.7), roughness=0.4, metallic=0.3)
    wo = np.array([0.4, 0.0, np.sqrt(1 - 0.16)])
    n_draw = 400_000
    u = rng.uniform(size=(n_draw, 3))
    d, pdf, _, valid = sh.sample_brdf(wo, Z, p, u)
    d = d[valid]
    # bin over (cos_theta, phi); expected mass from the analytic mixture pdf
    nb_mu, nb_phi = 12, 12
    mu_edges = np.linspace(0, 1, nb_mu + 1)
    cos_d = d[:, 2]
    phi_d = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    obs, _, _ = np.histogram2d(cos_d, phi_d, bins=[mu_edges,
                               np.linspace(0, 2 * np.pi, nb_phi + 1)])
    nodes, weights = np.polynomial.legendre.leggauss(24)
    total_inside = 0.0
    for i in range(nb_mu):
        lo, hi = mu_edges[i], mu_edges[i + 1]
        mus = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        wm = 0.5 * (hi - lo) * weights
        for j in range(nb_phi):
            plo, phi_ = 2 * np.pi * j / nb_phi, 2 * np.pi * (j + 1) / nb_phi
            ps = 0.5 * (phi_ - plo) * nodes + 0.5 * (phi_ + plo)
            wp = 0.5 * (phi_ - plo) * weights
            st = np.sqrt(1 - mus ** 2)
            dirs = np.stack([np.outer(st, np.cos(ps)), np.outer(st, np.sin(ps)),
                             np.broadcast_to(mus[:, None], (24, 24)).copy()],
                            axis=-1).reshape(-1, 3)
            pv = sh.brdf_pdf(dirs, wo, Z, p)
            mass = np.sum(pv.reshape(24, 24) * np.outer(wm, wp))
            total_inside += mass
            expect = n_draw * mass
            if expect > 100:
                assert abs(obs[i, j] - expect) < 6 * np.sqrt(expect) + 3, (i, j)
    # the mixture integrates to ~1 (valid samples dominate)
    assert abs(total_inside - 1.0) < 2e-2


def test_sampling_estimates_furnace_integral():
    rng = np.random.default_rng(31)
    p = sh.SurfaceParams(albedo=np.array([0.8, 0.6, 0.4]), roughness=0.4,
                         metallic=0.3)
    wo = np.array([0.0, 0.6, 0.8])
    want = furnace_quadrature(wo, Z, p)
    u = rng.uniform(size=(200_000, 3))
    d, pdf, _, valid = sh.sample_brdf(wo, Z, p, u)
    f = sh.disney_brdf_eval(d, wo, Z, p)
    contrib = np.where(valid[:, None], f * np.maximum(d[:, 2:3], 0.0)
                       / np.maximum(pdf, 1e-12)[:, None], 0.0)
    got = contrib.mean(axis=0)
    assert np.abs(got - want).max() / want.max() < 0.02


# ------------------------------------------------------------ refraction

def test_refract_straight_through_at_eta_one():
    w = np.array([0.3, -0.2, 0.93])
    w /= np.linalg.norm(w)
    out = sh.refract_dir(w, Z, 1.0)
    assert np.allclose(out, w, atol=1e-14)


def test_refract_normal_incidence():
    out = sh.refract_dir(np.array([0.0, 0.0, -1.0]), Z, 1.0 / 1.5)
    assert np.allclose(out, [0.0, 0.0, -1.0], atol=1e-14)


def test_refract_snell_angles():
    eta = 1.0 / 1.5  # entering the dense medium
    for deg in (10.0, 30.0, 55.0, 80.0):
        th = np.radians(deg)
        w = np.array([np.sin(th), 0.0, -np.cos(th)])
        out = sh.refract_dir(w, Z, eta)
        sin_t = np.hypot(out[0], out[1])
        assert np.isclose(sin_t, eta * np.sin(th), atol=1e-12)
        assert out[2] < 0  # keeps going down


def test_refract_total_internal_reflection():
    eta = 1.5  # leaving the dense medium
    crit = np.arcsin(1 / 1.5)
    th = crit + 0.05
    w = np.array([np.sin(th), 0.0, -np.cos(th)])
    assert sh.refract_dir(w, Z, eta) is None
    th = crit - 0.05
    w = np.array([np.sin(th), 0.0, -np.cos(th)])
    assert sh.refract_dir(w, Z, eta) is not None


def test_refract_normal_autoflip():
    w = np.array([0.3, 0.0, -np.sqrt(1 - 0.09)])
    a = sh.refract_dir(w, Z, 1 / 1.5)
    b = sh.refract_dir(w, -Z, 1 / 1.5)
    assert np.allclose(a, b, atol=1e-14)
