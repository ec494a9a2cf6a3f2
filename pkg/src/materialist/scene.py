"""Scene bundle: the input image, G-buffer maps, masks, camera, and envmap.

Bundle directory layout:
    input.pfm|png, albedo.pfm|png, roughness.pfm|png, metallic.pfm|png,
    normal.pfm, depth.pfm, envmap.pfm (optional), masks/<name>.png,
    camera.cfg, edits/<name>.cfg, plus optional optimized maps
    albedo_o/roughness_o/metallic_o.pfm.

Grids store float32 (so saves round-trip bit-faithfully); math upcasts to
float64 at the point of use. Bundles are immutable by convention: edits
construct new grids rather than writing into loaded ones.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import storage
from .geometry import CameraModel


@dataclass
class ImageGrid:
    width: int
    height: int
    channels: int
    data: np.ndarray  # (H, W) or (H, W, 3) float32, linear space

    @classmethod
    def from_array(cls, arr, check_finite=True):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            channels = 1
        elif arr.ndim == 3 and arr.shape[2] in (1, 3):
            channels = arr.shape[2]
            if channels == 1:
                arr = arr[:, :, 0]
        else:
            raise ValueError(f"bad image shape {arr.shape}")
        arr = arr.astype(np.float32)
        if check_finite and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite pixel values")
        return cls(width=arr.shape[1], height=arr.shape[0],
                   channels=channels, data=arr)

    def f64(self):
        return self.data.astype(np.float64)

    def copy(self):
        return ImageGrid(self.width, self.height, self.channels,
                         self.data.copy())


@dataclass
class EnvMap:
    radiance: np.ndarray  # (16, 32, 3) float32, >= 0

    width: int = 32
    height: int = 16

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("envmap must be (H, W, 3)")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("envmap radiance must be finite and >= 0")
        return cls(radiance=arr, width=arr.shape[1], height=arr.shape[0])

    def f64(self):
        return self.radiance.astype(np.float64)


@dataclass
class HdrPolicy:
    clip_max: float = 10.0
    use_log1p: bool = False

    def __post_init__(self):
        if self.clip_max <= 0:
            raise ValueError("clip_max must be positive")


def hdr_preprocess(img, policy):
    """Clip to [0, clip_max], then optionally v -> ln(1+v). Raises on
    negative inputs."""
    arr = img.f64() if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("hdr_preprocess expects nonnegative linear values")
    arr = np.minimum(arr, policy.clip_max)
    if policy.use_log1p:
        arr = np.log1p(arr)
    return ImageGrid.from_array(arr)


def hdr_postprocess(img, policy):
    """Inverse of the log leg: v -> exp(v)-1 (identity when log is off)."""
    arr = img.f64() if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if policy.use_log1p:
        arr = np.expm1(arr)
    return ImageGrid.from_array(arr)


@dataclass
class SceneBundle:
    input: ImageGrid
    albedo_p: ImageGrid
    roughness_p: ImageGrid
    metallic_p: ImageGrid
    normal_p: ImageGrid
    depth_p: ImageGrid
    camera: CameraModel
    masks: dict = field(default_factory=dict)
    envmap: EnvMap = None
    albedo_o: ImageGrid = None
    roughness_o: ImageGrid = None
    metallic_o: ImageGrid = None
    invalid_depth: np.ndarray = None   # bool (H, W): outside (0, 20]
    warnings: dict = field(default_factory=dict)
    prior_maps: tuple = ()             # names defaulted to the 0.5 prior

    @property
    def width(self):
        return self.input.width

    @property
    def height(self):
        return self.input.height

    def valid_mask(self):
        return ~self.invalid_depth

    def material(self, name):
        """Optimized map when present, else the prediction."""
        opt = getattr(self, f"{name}_o")
        return opt if opt is not None else getattr(self, f"{name}_p")


DEPTH_RANGE = (0.0, 20.0)


def _find(path, stem, exts=("pfm", "png")):
    for ext in exts:
        p = os.path.join(path, f"{stem}.{ext}")
        if os.path.exists(p):
            return p
    return None


def _load_map(p, srgb):
    if p.endswith(".pfm"):
        return storage.read_pfm(p)
    return storage.read_png(p, srgb=srgb)


def load_bundle(path):
    """Load and validate a bundle directory. Out-of-range albedo/roughness/
    metallic values are clamped with a warning count; depth outside (0, 20]
    is flagged in invalid_depth rather than rejected. Missing roughness or
    metallic maps fall back to the 0.5 prior."""
    required = {"input": True, "albedo": True, "normal": False, "depth": False}
    found = {}
    for stem, srgb in required.items():
        p = _find(path, stem)
        if p is None:
            raise FileNotFoundError(f"missing required file: {stem}.pfm/.png in {path}")
        if stem in ("normal", "depth") and not p.endswith(".pfm"):
            raise ValueError(f"{stem} must be a float map (.pfm)")
        found[stem] = _load_map(p, srgb)

    cam_path = os.path.join(path, "camera.cfg")
    if not os.path.exists(cam_path):
        raise FileNotFoundError(f"missing required file: camera.cfg in {path}")
    cfg = storage.read_cfg(cam_path)
    extr = np.eye(4)
    if "extrinsic" in cfg:
        extr = np.asarray(cfg["extrinsic"], dtype=np.float64).reshape(4, 4)
    cam = CameraModel(fov_deg=float(cfg.get("fov_deg", 35.0)),
                      width=int(cfg["width"]), height=int(cfg["height"]),
                      extrinsic=extr)

    warnings = {}
    prior = []
    maps = {}
    for stem in ("roughness", "metallic"):
        p = _find(path, stem)
        if p is None:
            maps[stem] = np.full(found["input"].shape[:2], 0.5, dtype=np.float32)
            prior.append(stem)
        else:
            maps[stem] = _load_map(p, srgb=False)

    H, W = found["input"].shape[:2]
    grids = {"input": found["input"], "albedo": found["albedo"],
             "roughness": maps["roughness"], "metallic": maps["metallic"],
             "normal": found["normal"], "depth": found["depth"]}
    for name, arr in grids.items():
        if arr.shape[:2] != (H, W):
            raise ValueError(f"dimension mismatch: {name} is {arr.shape[:2]}, "
                             f"input is {(H, W)}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in {name}")
    if (cam.width, cam.height) != (W, H):
        raise ValueError("camera.cfg dimensions disagree with the maps")

    def clamped01(name, arr):
        n = int(np.count_nonzero((arr < 0) | (arr > 1)))
        if n:
            warnings[f"{name}_clamped"] = n
        return np.clip(arr, 0.0, 1.0)

    albedo = clamped01("albedo", grids["albedo"])
    rough = clamped01("roughness", _to_gray(grids["roughness"]))
    metal = clamped01("metallic", _to_gray(grids["metallic"]))

    depth = _to_gray(grids["depth"])
    invalid = ~((depth > DEPTH_RANGE[0]) & (depth <= DEPTH_RANGE[1]))
    if invalid.any():
        warnings["depth_invalid"] = int(invalid.sum())

    normal = grids["normal"].astype(np.float64)
    if normal.ndim != 3 or normal.shape[2] != 3:
        raise ValueError("normal map must have 3 channels")
    nn = np.linalg.norm(normal, axis=2)
    if np.any(nn < 1e-6):
        raise ValueError("normal map contains zero vectors")
    off = int(np.count_nonzero(np.abs(nn - 1.0) > 1e-4))
    if off:
        warnings["normals_renormalized"] = off
    normal = normal / nn[:, :, None]

    bundle = SceneBundle(
        input=ImageGrid.from_array(grids["input"]),
        albedo_p=ImageGrid.from_array(albedo),
        roughness_p=ImageGrid.from_array(rough),
        metallic_p=ImageGrid.from_array(metal),
        normal_p=ImageGrid.from_array(normal),
        depth_p=ImageGrid.from_array(depth),
        camera=cam,
        invalid_depth=invalid,
        warnings=warnings,
        prior_maps=tuple(prior),
    )

    mask_dir = os.path.join(path, "masks")
    if os.path.isdir(mask_dir):
        for fn in sorted(os.listdir(mask_dir)):
            if fn.endswith(".png"):
                m = storage.read_png(os.path.join(mask_dir, fn), srgb=False)
                bundle.masks[fn[:-4]] = ImageGrid.from_array((m > 0.5).astype(np.float32))

    env_p = _find(path, "envmap", exts=("pfm",))
    if env_p:
        bundle.envmap = EnvMap.from_array(storage.read_pfm(env_p))
    for stem in ("albedo_o", "roughness_o", "metallic_o"):
        p = _find(path, stem, exts=("pfm",))
        if p:
            arr = storage.read_pfm(p)
            setattr(bundle, stem, ImageGrid.from_array(arr))
    return bundle


def _to_gray(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr


def save_bundle(bundle, path):
    """Write every float grid as PFM (bit-faithful), masks as 8-bit PNG, and
    the camera file; load_bundle(save_bundle(b)) reproduces float grids
    exactly."""
    storage.ensure_dir(path)
    storage.write_pfm(os.path.join(path, "input.pfm"), bundle.input.data)
    storage.write_pfm(os.path.join(path, "albedo.pfm"), bundle.albedo_p.data)
    storage.write_pfm(os.path.join(path, "roughness.pfm"), bundle.roughness_p.data)
    storage.write_pfm(os.path.join(path, "metallic.pfm"), bundle.metallic_p.data)
    storage.write_pfm(os.path.join(path, "normal.pfm"), bundle.normal_p.data)
    storage.write_pfm(os.path.join(path, "depth.pfm"), bundle.depth_p.data)
    cam = bundle.camera
    cfg = {"fov_deg": float(cam.fov_deg), "width": cam.width, "height": cam.height}
    if not np.array_equal(cam.extrinsic, np.eye(4)):
        cfg["extrinsic"] = cam.extrinsic.ravel()
    storage.write_cfg(os.path.join(path, "camera.cfg"), cfg)
    if bundle.masks:
        storage.ensure_dir(os.path.join(path, "masks"))
        for name, m in bundle.masks.items():
            storage.write_png_mask(os.path.join(path, "masks", f"{name}.png"),
                                   m.data)
    if bundle.envmap is not None:
        storage.write_pfm(os.path.join(path, "envmap.pfm"), bundle.envmap.radiance)
    for stem in ("albedo_o", "roughness_o", "metallic_o"):
        g = getattr(bundle, stem)
        if g is not None:
            storage.write_pfm(os.path.join(path, f"{stem}.pfm"), g.data)
