"""Procedural meshes, envmaps, and synthetic scenes for tests and demos.

Everything here is deterministic given its seed. Scene builders produce
bundle directories (or in-memory bundles) whose depth/normal/material maps
are analytic renders of simple primitive layouts, so reconstruction and
optimization can be checked against known ground truth.
"""

import numpy as np

from .geometry import TriMesh, CameraModel, screen_dirs, merge_meshes


def make_quad(center, u_axis, v_axis):
    """Two-triangle rectangle spanning center +- u_axis +- v_axis."""
    c = np.asarray(center, dtype=np.float64)
    u = np.asarray(u_axis, dtype=np.float64)
    v = np.asarray(v_axis, dtype=np.float64)
    verts = np.array([c - u - v, c + u - v, c + u + v, c - u + v])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    n = np.cross(u, v)
    n = n / np.linalg.norm(n)
    normals = np.tile(n, (4, 1))
    return TriMesh(verts, tris, normals)


def make_box(center, half_extents):
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half_extents, dtype=np.float64)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1)
                        for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    verts = c + corners * h
    # faces as corner indices (x-, x+, y-, y+, z-, z+), outward winding
    faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, cc, d in faces:
        tris.append([a, b, cc])
        tris.append([a, cc, d])
    tris = np.asarray(tris, dtype=np.int32)
    # fix winding so geometric normals point away from the center
    va, vb, vc = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(vb - va, vc - va)
    outward = np.sum(n * ((va + vb + vc) / 3.0 - c), axis=1) < 0
    tris[outward] = tris[outward][:, ::-1]
    normals = corners / np.linalg.norm(corners, axis=1, keepdims=True)
    return TriMesh(verts, tris, normals)


def icosphere(center, radius, subdivisions=3):
    """Subdivided icosahedron; outward winding and exact vertex normals."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64)
    for _ in range(subdivisions):
        cache = {}
        vlist = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = vlist[i] + vlist[j]
                m = m / np.linalg.norm(m)
                cache[key] = len(vlist)
                vlist.append(m)
            return cache[key]

        new_tris = []
        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(vlist)
        tris = np.asarray(new_tris, dtype=np.int64)
    normals = verts.copy()
    verts = np.asarray(center, dtype=np.float64) + radius * verts
    return TriMesh(verts, tris.astype(np.int32), normals)


def hollow_shell(center, r_outer, r_inner, subdivisions=3):
    """Spherical shell: outer sphere plus inner sphere with flipped winding
    so geometric normals point out of the glass on both walls."""
    outer = icosphere(center, r_outer, subdivisions)
    inner = icosphere(center, r_inner, subdivisions)
    inner_tris = inner.triangles[:, ::-1] + outer.vertices.shape[0]
    verts = np.concatenate([outer.vertices, inner.vertices])
    tris = np.concatenate([outer.triangles, inner_tris]).astype(np.int32)
    normals = np.concatenate([outer.normals, -inner.normals])
    return TriMesh(verts, tris, normals)


def checkerboard(h, w, cells=8, lo=0.1, hi=0.9):
    """3-channel checker pattern in [0,1]."""
    ry = np.arange(h) // max(1, h // cells)
    cx = np.arange(w) // max(1, w // cells)
    board = (ry[:, None] + cx[None, :]) % 2
    img = np.where(board[:, :, None] == 0, lo, hi)
    return np.broadcast_to(img, (h, w, 3)).astype(np.float64).copy()


# --------------------------------------------------------------- envmaps

def smooth_envmap(h=16, w=32, seed=0, n_lobes=3, peak=6.0, ambient=0.25):
    """Smooth HDR envmap: ambient plus a few spherical Gaussian lobes with
    random axes, widths, and colors. Deterministic per seed."""
    from .render import uv_to_dir

    rng = np.random.default_rng(seed)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dirs = uv_to_dir((cc + 0.5) / w, (rr + 0.5) / h)
    rad = np.full((h, w, 3), ambient, dtype=np.float64)
    for _ in range(n_lobes):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        sharp = rng.uniform(4.0, 18.0)
        color = rng.uniform(0.3, 1.0, size=3) * rng.uniform(0.5 * peak, peak)
        rad += color * np.exp(sharp * (dirs @ axis - 1.0))[..., None]
    return rad


# --------------------------------------------------- gbuffers and bundles

def trace_gbuffer(objects, cam):
    """Analytic G-buffers for a list of scene objects.

    objects: list of dicts with keys
      mesh: TriMesh
      albedo: RGB triple or callable(world_pos (k,3)) -> (k,3)
      roughness, metallic: floats
      smooth: interpolate vertex normals (True) or use facet normals
    Returns (gbuf dict, merged TriMesh). Miss pixels get depth 25 (flagged
    invalid downstream), normal -z, and the 0.5/0.0 material prior.
    """
    from .bvh import build_bvh, intersect_batch

    verts = np.zeros((0, 3))
    tris = np.zeros((0, 3), dtype=np.int32)
    norms = np.zeros((0, 3))
    starts = []
    for ob in objects:
        verts, tris, first = merge_meshes(verts, tris, ob["mesh"])
        norms = np.concatenate([norms, ob["mesh"].normals])
        starts.append(first)
    starts.append(tris.shape[0])
    merged = TriMesh(verts, tris, norms)
    bvh = build_bvh(verts, tris)

    hgt, wid = cam.height, cam.width
    rr, cc = np.meshgrid(np.arange(hgt), np.arange(wid), indexing="ij")
    dirs = screen_dirs(cam, (cc + 0.5).reshape(-1), (rr + 0.5).reshape(-1))
    origin = np.broadcast_to(cam.origin, dirs.shape)
    t, tri, bu, bv = intersect_batch(bvh, origin, dirs)
    hit = np.isfinite(t)
    pos = origin + np.where(hit, t, 1.0)[:, None] * dirs
    pos_cam = (pos - cam.origin) @ cam.rotation
    depth = np.where(hit, pos_cam[:, 2], 25.0)

    tid = np.where(hit, tri, 0)
    obj_of_tri = np.searchsorted(np.asarray(starts[1:-1]), tid, side="right") \
        if len(objects) > 1 else np.zeros(tid.shape, dtype=np.int64)

    va = verts[tris[tid, 0]]
    vb = verts[tris[tid, 1]]
    vc = verts[tris[tid, 2]]
    gn = np.cross(vb - va, vc - va)
    gn /= np.maximum(np.linalg.norm(gn, axis=1, keepdims=True), 1e-300)
    sn = ((1 - bu - bv)[:, None] * norms[tris[tid, 0]]
          + bu[:, None] * norms[tris[tid, 1]]
          + bv[:, None] * norms[tris[tid, 2]])
    sn /= np.maximum(np.linalg.norm(sn, axis=1, keepdims=True), 1e-300)

    p = dirs.shape[0]
    normal = np.where(hit[:, None], gn, [0.0, 0.0, -1.0])
    alb = np.full((p, 3), 0.5)
    rough = np.full(p, 0.5)
    metal = np.zeros(p)
    for k, ob in enumerate(objects):
        sel = hit & (obj_of_tri == k)
        if not sel.any():
            continue
        if ob.get("smooth"):
            normal[sel] = sn[sel]
        a = ob["albedo"]
        alb[sel] = a(pos[sel]) if callable(a) else np.asarray(a, dtype=np.float64)
        rough[sel] = ob["roughness"]
        metal[sel] = ob["metallic"]
    shape3 = (hgt, wid, 3)
    return dict(depth=depth.reshape(hgt, wid), normal=normal.reshape(shape3),
                albedo=alb.reshape(shape3), roughness=rough.reshape(hgt, wid),
                metallic=metal.reshape(hgt, wid), hit=hit.reshape(hgt, wid),
                obj=np.where(hit, obj_of_tri, -1).reshape(hgt, wid)), merged


def bundle_from_gbuffer(gbuf, cam, env, spp=64, seed=0, input_img=None,
                        pred_maps=None):
    """Assemble an in-memory SceneBundle whose input image is a render of
    the G-buffer geometry under env (unless given). pred_maps optionally
    replaces the stored predictions (e.g. perturbed ones)."""
    from .scene import SceneBundle, ImageGrid, EnvMap
    from .bvh import build_bvh
    from .render import RenderSettings, render_direct
    from .geometry import depth_to_mesh

    pm = dict(albedo=gbuf["albedo"], roughness=gbuf["roughness"],
              metallic=gbuf["metallic"])
    if pred_maps:
        pm.update(pred_maps)
    invalid = ~gbuf["hit"]
    placeholder = ImageGrid.from_array(np.zeros_like(gbuf["albedo"]))
    bundle = SceneBundle(
        input=placeholder,
        albedo_p=ImageGrid.from_array(pm["albedo"]),
        roughness_p=ImageGrid.from_array(pm["roughness"]),
        metallic_p=ImageGrid.from_array(pm["metallic"]),
        normal_p=ImageGrid.from_array(gbuf["normal"]),
        depth_p=ImageGrid.from_array(gbuf["depth"]),
        camera=cam, envmap=EnvMap(env) if isinstance(env, np.ndarray) else env,
        invalid_depth=invalid)
    mesh = depth_to_mesh(gbuf["depth"], gbuf["normal"], cam,
                         valid=gbuf["hit"])
    bvh = build_bvh(mesh.vertices, mesh.triangles)
    if input_img is None:
        true_mats = dict(albedo=gbuf["albedo"], roughness=gbuf["roughness"],
                         metallic=gbuf["metallic"])
        input_img = render_direct(bundle, bvh, bundle.envmap,
                                  RenderSettings(spp=spp, seed=seed),
                                  mats=true_mats, normals=gbuf["normal"])
    bundle.input = input_img if isinstance(input_img, ImageGrid) \
        else ImageGrid.from_array(input_img)
    return bundle, mesh, bvh


def _camera(width, height):
    return CameraModel(fov_deg=35.0, width=width, height=height)


def _floor(y=1.0, half=6.0, z_mid=6.0):
    return make_quad([0.0, y, z_mid], [half, 0.0, 0.0], [0.0, 0.0, half])


def recovery_scene(i, width=128, height=128):
    """Three fixed layouts for the envmap round trip: floor plus wall or
    blocker, fully known materials, true envmap smooth_envmap(seed=40+i)."""
    cam = _camera(width, height)
    floor = dict(mesh=_floor(), roughness=0.7, metallic=0.0,
                 albedo=lambda p: checker_world(p, 1.5, [0.75, 0.7, 0.65],
                                                [0.25, 0.3, 0.35]))
    wall = dict(mesh=make_quad([0.0, -1.5, 9.0], [6.0, 0.0, 0.0],
                               [0.0, -3.5, 0.0]),
                albedo=[0.6, 0.55, 0.5], roughness=0.5, metallic=0.0)
    if i == 0:
        objects = [floor, wall]
    elif i == 1:
        blocker = dict(mesh=make_box([0.8, 0.4, 4.0], [0.5, 0.6, 0.5]),
                       albedo=[0.7, 0.3, 0.25], roughness=0.4, metallic=0.0)
        objects = [floor, blocker]
    else:
        ball = dict(mesh=icosphere([-0.9, 0.5, 4.5], 0.5, 3), smooth=True,
                    albedo=[0.85, 0.7, 0.3], roughness=0.25, metallic=0.9)
        objects = [floor, wall, ball]
    env = smooth_envmap(seed=40 + i)
    gbuf, merged = trace_gbuffer(objects, cam)
    return gbuf, merged, cam, env


def checker_world(pos, cell, lo, hi):
    """World-space checker over the xz plane."""
    par = (np.floor(pos[:, 0] / cell) + np.floor(pos[:, 2] / cell)) % 2
    return np.where(par[:, None] == 0, np.asarray(lo, dtype=np.float64),
                    np.asarray(hi, dtype=np.float64))


def desk_scene(i, width=64, height=64):
    """Five small desk layouts with varied objects and materials; returns
    (gbuf, merged mesh, cam, true env). Predictions are made separately."""
    cam = _camera(width, height)
    rng = np.random.default_rng(100 + i)
    f_lo = rng.uniform(0.45, 0.8, 3)
    f_hi = rng.uniform(0.15, 0.45, 3)
    floor = dict(mesh=_floor(z_mid=5.0, half=5.0),
                 albedo=lambda p: checker_world(p, 1.0, f_lo, f_hi),
                 roughness=float(rng.uniform(0.5, 0.9)), metallic=0.0)
    objects = [floor]
    n_obj = 1 + i % 3
    for k in range(n_obj):
        x = float(rng.uniform(-1.4, 1.4))
        z = float(rng.uniform(3.0, 5.5))
        if (i + k) % 2 == 0:
            half = rng.uniform(0.25, 0.55, 3)
            objects.append(dict(
                mesh=make_box([x, 1.0 - half[1], z], half),
                albedo=rng.uniform(0.2, 0.85, 3).tolist(),
                roughness=float(rng.uniform(0.2, 0.8)),
                metallic=float(rng.choice([0.0, 0.1, 0.8]))))
        else:
            r = float(rng.uniform(0.3, 0.5))
            objects.append(dict(
                mesh=icosphere([x, 1.0 - r, z], r, 2), smooth=True,
                albedo=rng.uniform(0.2, 0.85, 3).tolist(),
                roughness=float(rng.uniform(0.15, 0.7)),
                metallic=float(rng.choice([0.0, 0.3]))))
    env = smooth_envmap(seed=200 + i)
    gbuf, merged = trace_gbuffer(objects, cam)
    return gbuf, merged, cam, env


def perturb_maps(gbuf, seed=0, sigma=0.02):
    """Near-true predictions: clipped Gaussian jitter of A, R, M."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in ("albedo", "roughness", "metallic"):
        m = gbuf[name]
        out[name] = np.clip(m + rng.normal(0.0, sigma, m.shape), 0.0, 1.0)
    return out
