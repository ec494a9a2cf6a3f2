"""Evaluation metrics: MSE/PSNR, windowed SSIM, and a truncated real
spherical-harmonics distance between envmaps."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.special import lpmv

from .render import texel_solid_angles, uv_to_dir
from .scene import ImageGrid

LUMA = np.array([0.2126, 0.7152, 0.0722])  # Rec. 709


def _arr(x):
    if isinstance(x, ImageGrid):
        return x.f64()
    return np.asarray(x, dtype=np.float64)


def mse_psnr(a, b, peak=1.0):
    """(mean squared error, 10*log10(peak^2/mse)); psnr is +inf at mse 0."""
    a = _arr(a)
    b = _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 0.0, float("inf")
    return mse, float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak=1.0):
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Color images are reduced to Rec. 709 luma first. Stabilizers are the
    usual (0.01*peak)^2 and (0.03*peak)^2; the window runs in valid mode so
    borders never see padding.
    """
    a = _arr(a)
    b = _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[2] == 3:
        a = a @ LUMA
        b = b @ LUMA
    if a.ndim != 2:
        raise ValueError("expected (H, W) or (H, W, 3) images")
    win = _gaussian_window()
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise ValueError("image smaller than the 11x11 ssim window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    va = convolve2d(a * a, win, mode="valid") - mu_a * mu_a
    vb = convolve2d(b * b, win, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2)
    return float(np.mean(num / den))


# ------------------------------------------------------ spherical harmonics

@dataclass
class ShCoeffs:
    l_max: int
    coeffs: np.ndarray  # (channels, (l_max+1)^2), rows ordered (l, m) lexical

    def __post_init__(self):
        k = (self.l_max + 1) ** 2
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != k:
            raise ValueError(f"expected {k} coefficients per channel")


def sh_basis(omega, l_max=2):
    """Real orthonormal SH stacked over (l, m), polar axis +y, azimuth zero
    at +z. The (-1)^m factor cancels the Condon-Shortley phase that lpmv
    builds in, landing on the plain graphics-table convention."""
    omega = np.asarray(omega, dtype=np.float64)
    ct = np.clip(omega[..., 1], -1.0, 1.0)
    phi = np.arctan2(omega[..., 0], omega[..., 2])
    cols = []
    for l in range(l_max + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            k = math.sqrt((2 * l + 1) / (4.0 * np.pi)
                          * math.factorial(l - am) / math.factorial(l + am))
            p = lpmv(am, l, ct)
            if m == 0:
                cols.append(k * p)
            else:
                trig = np.cos(am * phi) if m > 0 else np.sin(am * phi)
                cols.append(math.sqrt(2.0) * (-1.0) ** am * k * trig * p)
    return np.stack(cols, axis=-1)


def sh_project(env, l_max=2, subsamples=4):
    """Project an equirect radiance grid onto the truncated basis.

    c_lm = sum over texels of L * integral of Y_lm over the texel, the
    integral taken on a subsamples^2 sub-grid with exact sub-texel spherical
    areas. Radiance stays piecewise constant, so the projection is exactly
    linear in it, and c00 of a constant map is exact; a center-point rule
    would leave ~0.013 in the l=2 band at 16x32."""
    rad = np.asarray(getattr(env, "radiance", env), dtype=np.float64)
    h, w = rad.shape[:2]
    s = int(subsamples)
    hf, wf = h * s, w * s
    rr, cc = np.meshgrid(np.arange(hf), np.arange(wf), indexing="ij")
    dirs = uv_to_dir((cc.ravel() + 0.5) / wf, (rr.ravel() + 0.5) / hf)
    saf = np.repeat(texel_solid_angles(hf, wf), wf)
    basis = sh_basis(dirs, l_max) * saf[:, None]
    k = basis.shape[1]
    basis = basis.reshape(h, s, w, s, k).sum(axis=(1, 3)).reshape(h * w, k)
    flat = rad.reshape(h * w, -1)
    return ShCoeffs(l_max=l_max, coeffs=flat.T @ basis)


def sh_error(a, b, l_max=2):
    """Sum over channels of the L2 norm of the coefficient difference."""
    ca = sh_project(a, l_max).coeffs
    cb = sh_project(b, l_max).coeffs
    if ca.shape != cb.shape:
        raise ValueError("envmaps must share a channel count")
    return float(np.sum(np.sqrt(np.sum((ca - cb) ** 2, axis=1))))
