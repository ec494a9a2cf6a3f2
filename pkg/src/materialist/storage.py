"""On-disk formats: PFM float maps, PNG masks/previews, key=value cfg files.

PFM keeps float32 bits exactly, which is what makes save/load round trips
and the byte-identical determinism checks possible. PNG is only used for
8-bit masks and tone-mapped previews; color PNGs are decoded from sRGB to
linear on ingestion.
"""

import os

import numpy as np
from PIL import Image


def pfm_bytes(arr):
    """PFM payload for arr: (H,W)/(H,W,1) grayscale or (H,W,3) color,
    float32 kept bit-faithfully, little-endian, bottom-to-top scanlines."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        header = b"Pf\n"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"unsupported PFM shape {arr.shape}")
    data = np.flipud(arr.astype(np.float32, copy=False))
    h, w = arr.shape[0], arr.shape[1]
    return (header + f"{w} {h}\n".encode() + b"-1.0\n"
            + data.astype("<f4", copy=False).tobytes())


def write_pfm(path, arr):
    with open(path, "wb") as f:
        f.write(pfm_bytes(arr))


def read_pfm(path):
    """Returns float32 array (H,W) or (H,W,3)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        dt = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(raw, dtype=dt).astype(np.float32)
        if channels == 3:
            arr = arr.reshape(h, w, 3)
        else:
            arr = arr.reshape(h, w)
        return np.flipud(arr).copy()


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def read_png(path, srgb=True):
    """8-bit PNG to float. Color images are sRGB-decoded to linear unless
    srgb=False; grayscale is returned as value/255 with no curve."""
    img = Image.open(path)
    if img.mode in ("L", "I;16", "I"):
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return arr
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr) if srgb else arr


def write_png_mask(path, mask):
    """Binary mask as 8-bit grayscale (0 or 255)."""
    m = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    Image.fromarray(m, mode="L").save(path)


def png_preview_bytes(linear_rgb, gamma_encode=True):
    """Tone-mapped LDR preview as PNG bytes: clip to [0,1], sRGB-encode,
    8-bit."""
    import io
    arr = np.clip(np.asarray(linear_rgb, dtype=np.float64), 0.0, 1.0)
    if gamma_encode:
        arr = linear_to_srgb(arr)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="L" if u8.ndim == 2 else "RGB").save(
        buf, format="PNG")
    return buf.getvalue()


def write_png_preview(path, linear_rgb, gamma_encode=True):
    with open(path, "wb") as f:
        f.write(png_preview_bytes(linear_rgb, gamma_encode))


def _coerce(tok):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    return tok


def read_cfg(path):
    """Plain key=value file; '#' starts a comment. Multi-token values come
    back as lists, single tokens are coerced to int/float/bool when they
    parse as one."""
    out = {}
    with open(path, "r") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed line {line!r}")
            key, val = line.split("=", 1)
            toks = val.strip().split()
            if len(toks) == 1:
                out[key.strip()] = _coerce(toks[0])
            else:
                out[key.strip()] = [_coerce(t) for t in toks]
    return out


def write_cfg(path, mapping):
    with open(path, "w") as f:
        for k, v in mapping.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                v = " ".join(repr(float(x)) for x in np.asarray(v).ravel())
            elif isinstance(v, float):
                v = repr(v)
            f.write(f"{k}={v}\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
