"""Command-line front end.

    materialist reconstruct BUNDLE [--tau 3] [--out DIR]
    materialist optimize    BUNDLE --stage envmap|materials_joint|materials_staged ...
    materialist render      BUNDLE [--out img.pfm] [--png img.png] [--spp N]
    materialist edit        BUNDLE EDIT.cfg --out img.pfm [...]
    materialist evaluate    IMG REF [--envmaps A.pfm B.pfm]
    materialist serve       BUNDLE [--port 8000]

Exit codes: 0 ok, 2 bad input (missing file, invalid edit), 3 optimizer
divergence (partial loss history still written). All float artifacts are
byte-stable for a fixed seed: PFM payloads are exact float32 bits and the
loss CSV carries no timestamps.

The BUNDLE argument resolves relative to $MATERIALIST_BUNDLE_ROOT when the
path does not exist as given.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import storage
from .bvh import build_bvh
from .edit import (BackgroundAlbedo, EditRequest, RefractionDistances,
                   apply_opaque_edit, hsv_albedo_edit, insert_object,
                   refraction_distance_oracle, relight,
                   transparency_composite)
from .geometry import boundary_duplicate, depth_to_mesh, read_obj
from .inverse import (DivergenceError, OptimizeConfig, history_csv,
                      optimize_envmap, optimize_materials)
from .metrics import mse_psnr, sh_error, ssim
from .render import RenderSettings, render_direct
from .scene import EnvMap, HdrPolicy, hdr_preprocess, load_bundle
from .shading import GlassParams, SurfaceParams

EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


def _resolve_bundle(path):
    if os.path.isdir(path):
        return path
    root = os.environ.get("MATERIALIST_BUNDLE_ROOT")
    if root and os.path.isdir(os.path.join(root, path)):
        return os.path.join(root, path)
    raise CliError(f"missing required file: bundle directory {path!r}")


def _load(path):
    try:
        return load_bundle(_resolve_bundle(path))
    except (FileNotFoundError, ValueError) as e:
        raise CliError(f"missing required file: {e}" if isinstance(
            e, FileNotFoundError) else str(e))


CACHE = "cache"


def _cache_paths(bpath):
    d = os.path.join(bpath, CACHE)
    return (d, os.path.join(d, "verts.npy"), os.path.join(d, "tris.npy"),
            os.path.join(d, "mesh.cfg"))


def _reconstruct(bundle, bpath, tau):
    mesh = depth_to_mesh(bundle.depth_p, bundle.normal_p, bundle.camera,
                         tau_deg=tau, valid=bundle.valid_mask())
    mesh = boundary_duplicate(mesh, bundle.depth_p)
    d, pv, pt, pm = _cache_paths(bpath)
    storage.ensure_dir(d)
    np.save(pv, mesh.vertices)
    np.save(pt, mesh.triangles)
    storage.write_cfg(pm, dict(
        tau=float(tau), triangles=int(mesh.stats["triangles"]),
        boundary_vertices=int(mesh.boundary_flags.sum()),
        bd_vertices=int(mesh.stats.get("bd_vertices", 0))))
    return mesh


def _cached_bvh(bundle, bpath, tau=3.0):
    """BVH from the cache, rebuilding (and caching) when absent."""
    _, pv, pt, pm = _cache_paths(bpath)
    if os.path.exists(pv) and os.path.exists(pt):
        return build_bvh(np.load(pv), np.load(pt))
    mesh = _reconstruct(bundle, bpath, tau)
    return build_bvh(mesh.vertices, mesh.triangles)


def cmd_reconstruct(args):
    bpath = _resolve_bundle(args.bundle)
    bundle = _load(bpath)
    mesh = _reconstruct(bundle, args.out or bpath, args.tau)
    print(f"triangles={mesh.stats['triangles']}")
    print(f"boundary_vertices={int(mesh.boundary_flags.sum())}")
    print(f"bd_vertices={mesh.stats.get('bd_vertices', 0)}")
    return 0


def cmd_optimize(args):
    bpath = _resolve_bundle(args.bundle)
    bundle = _load(bpath)
    bvh = _cached_bvh(bundle, bpath)
    cfg = OptimizeConfig(stage=args.stage, delta=args.delta, zeta=args.zeta,
                         max_steps=args.steps, spp=args.spp, seed=args.seed,
                         lr=args.lr, eval_spp=args.eval_spp,
                         hdr=HdrPolicy(use_log1p=args.log1p))
    out = args.out or bpath
    storage.ensure_dir(out)
    hist_path = os.path.join(out, f"loss_history_{args.stage}.csv")
    try:
        if args.stage == "envmap":
            env, history = optimize_envmap(bundle, bvh, cfg)
            storage.write_pfm(os.path.join(out, "envmap.pfm"), env.radiance)
            print(f"final_l_re={history[-1].l_re:.17g}")
            print(f"best_l_re={min(r.l_re for r in history):.17g}")
        else:
            if bundle.envmap is None:
                raise CliError("missing required file: envmap.pfm "
                               "(run the envmap stage first)")
            maps, history = optimize_materials(bundle, bvh, bundle.envmap,
                                               cfg)
            for name in ("albedo", "roughness", "metallic"):
                storage.write_pfm(os.path.join(out, f"{name}_o.pfm"),
                                  maps[name].data)
            print(f"final_l_total={history[-1].l_total:.17g}")
    except DivergenceError as e:
        with open(hist_path, "w") as f:
            f.write(history_csv(e.history))
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    with open(hist_path, "w") as f:
        f.write(history_csv(history))
    print(f"steps={len(history)}")
    return 0


def _settings(args):
    kw = dict(spp=args.spp, seed=args.seed)
    if getattr(args, "use_mis", False):
        kw["use_mis"] = True
    if getattr(args, "cfg", None):
        c = storage.read_cfg(args.cfg)
        kw.update({k: c[k] for k in ("spp", "seed", "use_mis") if k in c})
    return RenderSettings(**kw)


def _write_image(img, out, png):
    if out:
        storage.write_pfm(out, img.data)
    if png:
        storage.write_png_preview(png, img.f64())


def cmd_render(args):
    bpath = _resolve_bundle(args.bundle)
    bundle = _load(bpath)
    if bundle.envmap is None:
        raise CliError("missing required file: envmap.pfm (optimize first)")
    bvh = _cached_bvh(bundle, bpath)
    img = render_direct(bundle, bvh, bundle.envmap, _settings(args))
    _write_image(img, args.out, args.png)
    print(f"rendered {bundle.width}x{bundle.height} spp={args.spp}")
    return 0


# ------------------------------------------------------------------- edits

def _need(cfg, key, path):
    if key not in cfg:
        raise CliError(f"invalid edit file {path}: missing key {key!r}")
    return cfg[key]


def _rgb(v, key, path):
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 1:
        arr = np.repeat(arr, 3)
    if arr.size != 3:
        raise CliError(f"invalid edit file {path}: {key} wants 1 or 3 values")
    return arr


def _mask_of(bundle, cfg, path, required=True):
    if "mask" not in cfg:
        if required:
            raise CliError(f"invalid edit file {path}: missing key 'mask'")
        return None
    name = str(cfg["mask"])
    if name not in bundle.masks:
        raise CliError(f"invalid edit file {path}: unknown mask {name!r}")
    return bundle.masks[name].data > 0.5


def _relpath(p, base):
    return p if os.path.isabs(p) else os.path.join(base, p)


def resolve_edit(bundle, bvh, cfg, path, st):
    """Run one parsed edit file against the bundle. Returns (image, edited
    bundle or None)."""
    kind = _need(cfg, "kind", path)
    base = os.path.dirname(os.path.abspath(path))
    if kind == "opaque":
        mask = _mask_of(bundle, cfg, path)
        params = {}
        for op in ("set", "offset"):
            vals = {}
            for name in ("albedo", "roughness", "metallic"):
                k = f"{op}_{name}"
                if k in cfg:
                    v = np.asarray(cfg[k], dtype=np.float64)
                    vals[name] = _rgb(v, k, path) if name == "albedo" \
                        else float(v)
            if vals:
                params[op] = vals
        if not params:
            raise CliError(f"invalid edit file {path}: opaque edit needs "
                           "set_*/offset_* keys")
        try:
            edited = apply_opaque_edit(bundle, EditRequest(
                kind="opaque", mask=mask, params=params))
        except (ValueError, KeyError) as e:
            raise CliError(f"invalid edit file {path}: {e}")
        return render_direct(edited, bvh, bundle.envmap, st), edited
    if kind == "hsv":
        mask = _mask_of(bundle, cfg, path)
        edited = hsv_albedo_edit(bundle, mask, dh=float(cfg.get("dh", 0.0)),
                                 ss=float(cfg.get("ss", 1.0)),
                                 sv=float(cfg.get("sv", 1.0)))
        return render_direct(edited, bvh, bundle.envmap, st), edited
    if kind == "relight":
        if "envmap" in cfg:
            env = EnvMap.from_array(
                storage.read_pfm(_relpath(str(cfg["envmap"]), base)))
        else:
            env = bundle.envmap
        scale = float(cfg.get("scale", 1.0))
        if scale != 1.0:
            env = EnvMap(scale * env.f64())
        return relight(bundle, bvh, env, st), None
    if kind == "insert":
        mesh_path = _relpath(str(_need(cfg, "mesh", path)), base)
        if not os.path.exists(mesh_path):
            raise CliError(f"missing required file: {mesh_path}")
        mesh = read_obj(mesh_path)
        pose = None
        if "pose" in cfg:
            pose = np.asarray(cfg["pose"], dtype=np.float64)
            if pose.size != 16:
                raise CliError(f"invalid edit file {path}: pose wants 16 "
                               "row-major values")
            pose = pose.reshape(4, 4)
        params = SurfaceParams(
            albedo=_rgb(cfg.get("albedo", 0.5), "albedo", path),
            roughness=float(cfg.get("roughness", 0.5)),
            metallic=float(cfg.get("metallic", 0.0)))
        try:
            return insert_object(bundle, bvh, mesh, pose, params, st), None
        except ValueError as e:
            raise CliError(f"invalid edit file {path}: {e}")
    if kind == "transparency":
        mask = _mask_of(bundle, cfg, path)
        glass = GlassParams(
            transmission=float(cfg.get("transmission", 1.0)),
            eta=float(cfg.get("eta", 1.5)),
            background_albedo=_rgb(cfg.get("background_albedo", 1.0),
                                   "background_albedo", path))
        if "d1_map" in cfg:
            d1 = storage.read_pfm(_relpath(str(cfg["d1_map"]), base))
            d2 = np.zeros_like(d1)
            if "d2_map" in cfg:
                d2 = storage.read_pfm(_relpath(str(cfg["d2_map"]), base))
            dists = RefractionDistances(d1=d1, d2=d2, source="provided map")
        elif "mesh" in cfg:
            mp = _relpath(str(cfg["mesh"]), base)
            if not os.path.exists(mp):
                raise CliError(f"missing required file: {mp}")
            dists = refraction_distance_oracle(
                read_obj(mp), None, bundle.camera, mask,
                hollow=bool(cfg.get("hollow", False)))
        else:
            raise CliError(f"invalid edit file {path}: transparency needs "
                           "a 'mesh' or a 'd1_map'")
        if "a_bg_map" in cfg:
            a_bg = BackgroundAlbedo.from_array(
                storage.read_pfm(_relpath(str(cfg["a_bg_map"]), base)))
        else:
            flat = _rgb(cfg.get("a_bg", 1.0), "a_bg", path)
            a_bg = BackgroundAlbedo.from_array(
                np.broadcast_to(flat, (bundle.height, bundle.width, 3)))
        warnings = {}
        img = transparency_composite(bundle, bvh, bundle.envmap, mask,
                                     glass, dists, a_bg, st,
                                     warnings=warnings)
        for k, v in sorted(warnings.items()):
            if v:
                print(f"warning: {k}={v}")
        return img, None
    raise CliError(f"invalid edit file {path}: unknown kind {kind!r}")


def cmd_edit(args):
    bpath = _resolve_bundle(args.bundle)
    bundle = _load(bpath)
    if bundle.envmap is None:
        raise CliError("missing required file: envmap.pfm (optimize first)")
    if not os.path.exists(args.edit_file):
        raise CliError(f"missing required file: {args.edit_file}")
    try:
        cfg = storage.read_cfg(args.edit_file)
    except ValueError as e:
        raise CliError(f"invalid edit file: {e}")
    bvh = _cached_bvh(bundle, bpath)
    st = _settings(args)
    img, edited = resolve_edit(bundle, bvh, cfg, args.edit_file, st)
    _write_image(img, args.out, args.png)
    if args.save_bundle and edited is not None:
        from .scene import save_bundle
        save_bundle(edited, args.save_bundle)
    if args.out:
        with open(args.edit_file, "rb") as f:
            sha = hashlib.sha256(f.read()).hexdigest()
        storage.write_cfg(args.out + ".provenance.cfg", dict(
            kind=str(cfg["kind"]), bundle=os.path.abspath(bpath),
            edit_file=os.path.abspath(args.edit_file), edit_sha256=sha,
            spp=st.spp, seed=st.seed))
    print(f"edit kind={cfg['kind']} done")
    return 0


def cmd_evaluate(args):
    for p in (args.image, args.ref):
        if not os.path.exists(p):
            raise CliError(f"missing required file: {p}")
    a = storage.read_pfm(args.image)
    b = storage.read_pfm(args.ref)
    pol = HdrPolicy(clip_max=args.clip)
    a = hdr_preprocess(a, pol).f64()
    b = hdr_preprocess(b, pol).f64()
    mse, psnr = mse_psnr(a, b, peak=args.clip)
    print(f"mse={mse:.17g}")
    print(f"psnr={psnr:.17g}")
    print(f"ssim={ssim(a, b, peak=args.clip):.17g}")
    if args.envmaps:
        e1 = EnvMap.from_array(storage.read_pfm(args.envmaps[0]))
        e2 = EnvMap.from_array(storage.read_pfm(args.envmaps[1]))
        print(f"sh_error={sh_error(e1, e2):.17g}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import make_app
    app = make_app(_resolve_bundle(args.bundle), preview_spp=args.spp)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="materialist", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconstruct", help="depth map to cached mesh + BVH")
    r.add_argument("bundle")
    r.add_argument("--tau", type=float, default=3.0,
                   help="grazing-angle threshold, degrees")
    r.add_argument("--out", default=None, help="cache directory root")
    r.set_defaults(func=cmd_reconstruct)

    o = sub.add_parser("optimize", help="fit envmap or material maps")
    o.add_argument("bundle")
    o.add_argument("--stage", required=True,
                   choices=["envmap", "materials_joint", "materials_staged"])
    o.add_argument("--delta", type=float, default=0.5)
    o.add_argument("--zeta", type=float, default=0.3)
    o.add_argument("--steps", type=int, default=500)
    o.add_argument("--spp", type=int, default=4)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--lr", type=float, default=1e-3)
    o.add_argument("--eval-spp", type=int, default=32)
    o.add_argument("--log1p", action="store_true")
    o.add_argument("--out", default=None, help="artifact directory")
    o.set_defaults(func=cmd_optimize)

    def render_flags(q):
        q.add_argument("--spp", type=int, default=16)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--use-mis", action="store_true")
        q.add_argument("--cfg", default=None, help="key=value settings file")
        q.add_argument("--out", default=None, help="output PFM")
        q.add_argument("--png", default=None, help="tone-mapped preview PNG")

    n = sub.add_parser("render", help="re-render the bundle as-is")
    n.add_argument("bundle")
    render_flags(n)
    n.set_defaults(func=cmd_render)

    e = sub.add_parser("edit", help="apply an edit file and render")
    e.add_argument("bundle")
    e.add_argument("edit_file")
    render_flags(e)
    e.add_argument("--save-bundle", default=None,
                   help="also save the edited bundle here")
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("evaluate", help="image and envmap metrics")
    v.add_argument("image")
    v.add_argument("ref")
    v.add_argument("--clip", type=float, default=10.0)
    v.add_argument("--envmaps", nargs=2, default=None,
                   metavar=("ENV_A", "ENV_B"))
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("serve", help="HTTP edit service")
    s.add_argument("bundle")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--spp", type=int, default=2, help="preview spp")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
