"""Camera model, screen/world transforms, and depth-map mesh reconstruction.

Conventions: camera space is x right, y down, z forward; pixel (row, col)
has its center at screen (col+0.5, row+0.5); depth maps store planar
z-depth in meters. The extrinsic is the camera-to-world rigid transform, so
world_to_screen applies its inverse, then the perspective projection, NDC,
and the viewport map x_s = ((x_ndc + 1)/2) * W.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np


def _as_hw(x, channels=None):
    arr = x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else x
    arr = np.asarray(arr, dtype=np.float64)
    if channels == 1 and arr.ndim == 3:
        arr = arr[:, :, 0]
    return arr


@dataclass
class CameraModel:
    fov_deg: float = 35.0
    width: int = 512
    height: int = 512
    extrinsic: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError(f"fov_deg out of range: {self.fov_deg}")
        if self.extrinsic.shape != (4, 4):
            raise ValueError("extrinsic must be 4x4")

    @property
    def tan_half(self):
        # vertical half-angle; square images make the choice moot
        return np.tan(np.radians(self.fov_deg) / 2.0)

    @property
    def aspect(self):
        return self.width / self.height

    @property
    def projection(self):
        f = 1.0 / self.tan_half
        P = np.zeros((4, 4))
        P[0, 0] = f / self.aspect
        P[1, 1] = f
        P[2, 2] = 1.0
        P[3, 2] = 1.0
        return P

    @property
    def rotation(self):
        return self.extrinsic[:3, :3]

    @property
    def origin(self):
        return self.extrinsic[:3, 3]


def world_to_screen(x, cam):
    """World position(s) [3] or [N,3] -> continuous screen (x_s, y_s).

    Raises on points at or behind the camera plane.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    local = (pts - cam.origin) @ cam.rotation  # R^T (x - t)
    z = local[:, 2]
    if np.any(z <= 1e-9):
        raise ValueError("point behind camera")
    xn = local[:, 0] / (z * cam.tan_half * cam.aspect)
    yn = local[:, 1] / (z * cam.tan_half)
    xs = (xn + 1.0) / 2.0 * cam.width
    ys = (yn + 1.0) / 2.0 * cam.height
    out = np.stack([xs, ys], axis=1)
    return out[0] if single else out


def screen_dirs(cam, xs, ys):
    """Unit world-space directions through continuous screen coordinates."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xn = 2.0 * xs / cam.width - 1.0
    yn = 2.0 * ys / cam.height - 1.0
    d = np.stack([xn * cam.tan_half * cam.aspect,
                  yn * cam.tan_half,
                  np.ones_like(xn)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ cam.rotation.T


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if not np.isclose(n, 1.0, atol=1e-9):
            self.direction = self.direction / n


@dataclass
class Hit:
    t: float
    tri: int
    u: float
    v: float
    geom_normal: np.ndarray
    shading_normal: np.ndarray = None
    screen: np.ndarray = None


def generate_camera_ray(pixel, cam, jitter=(0.5, 0.5)):
    """Ray through pixel (row, col) offset by subpixel jitter in [0,1)^2."""
    r, c = pixel
    d = screen_dirs(cam, np.array([c + jitter[0]]), np.array([r + jitter[1]]))[0]
    return Ray(cam.origin.copy(), d)


def backproject(cam, rows, cols, depth):
    """Pixel centers + planar z-depth -> world positions [N,3]."""
    xs = np.asarray(cols, dtype=np.float64) + 0.5
    ys = np.asarray(rows, dtype=np.float64) + 0.5
    z = np.asarray(depth, dtype=np.float64)
    xn = 2.0 * xs / cam.width - 1.0
    yn = 2.0 * ys / cam.height - 1.0
    local = np.stack([xn * cam.tan_half * cam.aspect * z,
                      yn * cam.tan_half * z,
                      z], axis=-1)
    return local @ cam.rotation.T + cam.origin


@dataclass
class ReconMesh:
    vertices: np.ndarray          # [Nv,3] world
    triangles: np.ndarray         # [Nt,3] int32
    pixel: np.ndarray             # [Nv,2] (row, col), source pixel
    screen: np.ndarray            # [Nv,2] (x_s, y_s)
    boundary_flags: np.ndarray    # [Nv] bool
    duplicated_from: np.ndarray   # [Nv] int32, -1 for originals
    normals: np.ndarray           # [Nv,3] shading normals (from normal_p)
    depth_v: np.ndarray           # [Nv] planar depth
    removed_triangles: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.int32))
    stats: dict = field(default_factory=dict)
    camera: CameraModel = None


@dataclass
class TriMesh:
    """Plain indexed triangle mesh (insertion objects)."""
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = None   # per-vertex, optional

    def transformed(self, pose):
        pose = np.asarray(pose, dtype=np.float64)
        v = self.vertices @ pose[:3, :3].T + pose[:3, 3]
        n = None
        if self.normals is not None:
            n = self.normals @ np.linalg.inv(pose[:3, :3]).T
            n /= np.linalg.norm(n, axis=1, keepdims=True)
        return TriMesh(v, self.triangles.copy(), n)


def _tri_grazing(verts, tris, cam_origin, tau_deg):
    """arcsin(|n.v|) < tau flags triangles nearly parallel to the view ray."""
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=1)
    nn = np.where(nn == 0.0, 1.0, nn)
    n = n / nn[:, None]
    centroid = (a + b + c) / 3.0
    v = centroid - cam_origin
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    ndv = np.abs(np.sum(n * v, axis=1))
    return np.arcsin(np.clip(ndv, 0.0, 1.0)) < np.radians(tau_deg)


def depth_to_mesh(depth, normal, cam, tau_deg=3.0, valid=None):
    """Grid-triangulate a depth map; flag boundary vertices by the grazing
    test, snap their depth to the nearest non-boundary pixel (BFS over the
    grid, ties by smaller row then column), and remove triangles that still
    graze afterwards (cross-object bridges). Removed triangles are kept on
    the mesh for boundary_duplicate.
    """
    d = _as_hw(depth, channels=1)
    nmap = _as_hw(normal)
    H, W = d.shape
    if valid is None:
        valid = np.isfinite(d) & (d > 0.0)
    else:
        valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("no valid depth pixels")

    vid = np.full((H, W), -1, dtype=np.int64)
    rows, cols = np.nonzero(valid)
    vid[rows, cols] = np.arange(rows.size)
    depth_v = d[rows, cols].astype(np.float64)
    verts = backproject(cam, rows, cols, depth_v)

    n_cam = nmap[rows, cols]
    norms = np.linalg.norm(n_cam, axis=1, keepdims=True)
    norms = np.where(norms == 0.0, 1.0, norms)
    v_normals = (n_cam / norms) @ cam.rotation.T

    # two triangles per fully-valid quad, consistent winding
    q = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1] & valid[1:, 1:]
    qr, qc = np.nonzero(q)
    v00 = vid[qr, qc]
    v01 = vid[qr, qc + 1]
    v10 = vid[qr + 1, qc]
    v11 = vid[qr + 1, qc + 1]
    tris = np.concatenate([np.stack([v00, v10, v11], axis=1),
                           np.stack([v00, v11, v01], axis=1)]).astype(np.int32)

    # drop zero-area triangles (defensive; valid depth>0 rarely produces any)
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    degenerate = area2 < 1e-16
    n_degenerate = int(degenerate.sum())
    tris = tris[~degenerate]

    graze = _tri_grazing(verts, tris, cam.origin, tau_deg)
    boundary_v = np.zeros(verts.shape[0], dtype=bool)
    boundary_v[tris[graze].ravel()] = True

    # snap boundary-vertex depth to the nearest non-boundary pixel (grid BFS)
    new_depth = depth_v.copy()
    if boundary_v.any() and not boundary_v.all():
        bpix = np.zeros((H, W), dtype=bool)
        bpix[rows[boundary_v], cols[boundary_v]] = True
        src = _nearest_nonboundary(valid, bpix)
        br, bc = rows[boundary_v], cols[boundary_v]
        sid = src[br, bc]
        ok = sid[:, 0] >= 0
        tgt = np.nonzero(boundary_v)[0][ok]
        new_depth[tgt] = d[sid[ok, 0], sid[ok, 1]]
        verts = backproject(cam, rows, cols, new_depth)

    graze2 = _tri_grazing(verts, tris, cam.origin, tau_deg)
    removed = tris[graze2]
    kept = tris[~graze2]

    screen = np.stack([cols + 0.5, rows + 0.5], axis=1).astype(np.float64)
    mesh = ReconMesh(
        vertices=verts,
        triangles=kept.astype(np.int32),
        pixel=np.stack([rows, cols], axis=1).astype(np.int32),
        screen=screen,
        boundary_flags=boundary_v,
        duplicated_from=np.full(verts.shape[0], -1, dtype=np.int32),
        normals=v_normals,
        depth_v=new_depth,
        removed_triangles=removed.astype(np.int32),
        stats={
            "triangles": int(kept.shape[0]),
            "boundary_vertices": int(boundary_v.sum()),
            "removed_triangles": int(removed.shape[0]),
            "degenerate_quads": n_degenerate,
            "flagged_first_pass": int(graze.sum()),
        },
        camera=cam,
    )
    return mesh


def _nearest_nonboundary(valid, bpix):
    """Per boundary pixel, the (row, col) of the nearest valid non-boundary
    pixel by 4-connected BFS; equal distances break by smaller row, then
    smaller column of the source. Returns int array [H,W,2], -1 where
    unreachable."""
    H, W = valid.shape
    src = np.full((H, W, 2), -1, dtype=np.int64)
    dist = np.full((H, W), -1, dtype=np.int64)
    seeds = valid & ~bpix
    frontier = deque()
    rr, cc = np.nonzero(seeds)
    # seed order sorted row-major so first-arrival ties resolve to the
    # smaller (row, col) source
    for r, c in zip(rr, cc):
        src[r, c] = (r, c)
        dist[r, c] = 0
        frontier.append((r, c))
    while frontier:
        r, c = frontier.popleft()
        for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < H and 0 <= c2 < W and valid[r2, c2]:
                nd = dist[r, c] + 1
                if dist[r2, c2] == -1:
                    dist[r2, c2] = nd
                    src[r2, c2] = src[r, c]
                    frontier.append((r2, c2))
                elif dist[r2, c2] == nd:
                    # same BFS depth reached from another parent: prefer the
                    # lexicographically smaller source pixel
                    cand = src[r, c]
                    cur = src[r2, c2]
                    if (cand[0], cand[1]) < (cur[0], cur[1]):
                        src[r2, c2] = cand
    return src


def boundary_duplicate(mesh, depth=None):
    """Re-add the removed cross-object triangles with their foreground
    vertices replaced by duplicates that keep the foreground screen
    coordinates but take the depth of the nearest background vertex, closing
    silhouette gaps behind foreground objects."""
    removed = mesh.removed_triangles
    if removed.shape[0] == 0:
        return mesh

    verts = mesh.vertices
    dv = mesh.depth_v
    # classify each removed triangle's vertices into near (fg) / far (bg)
    dup_of = {}
    new_tris = []
    dup_entries = []  # (src_index, bg_depth, bg_vertex)

    # gather fg vertex -> candidate bg vertices over all removed triangles
    cand = {}
    readd_plain = []
    for tri in removed:
        dvs = dv[tri]
        lo, hi = dvs.min(), dvs.max()
        if hi - lo < 1e-9:
            # continuous grazing surface flagged by tau, nothing to bridge
            readd_plain.append(tri)
            continue
        mid = 0.5 * (lo + hi)
        fg = tri[dvs < mid]
        bg = tri[dvs >= mid]
        for f in fg:
            cand.setdefault(int(f), []).extend(int(b) for b in bg)

    for f, bgs in sorted(cand.items()):
        # nearest bg vertex in screen space, ties by smaller vertex index
        s = mesh.screen[f]
        d2 = [(float(np.sum((mesh.screen[b] - s) ** 2)), b) for b in sorted(set(bgs))]
        d2.sort()
        b = d2[0][1]
        dup_of[f] = len(dup_entries)
        dup_entries.append((f, dv[b], b))

    nv0 = verts.shape[0]
    if dup_entries:
        srcs = np.array([e[0] for e in dup_entries])
        bgd = np.array([e[1] for e in dup_entries])
        bsrc = np.array([e[2] for e in dup_entries])
        rows = mesh.pixel[srcs, 0].astype(np.float64)
        cols = mesh.pixel[srcs, 1].astype(np.float64)
        dup_pos = backproject_from_screen(mesh, rows, cols, bgd)
        new_verts = np.concatenate([verts, dup_pos])
        new_pixel = np.concatenate([mesh.pixel, mesh.pixel[srcs]])
        new_screen = np.concatenate([mesh.screen, mesh.screen[srcs]])
        new_bound = np.concatenate([mesh.boundary_flags,
                                    np.ones(len(dup_entries), dtype=bool)])
        new_dupfrom = np.concatenate([mesh.duplicated_from,
                                      srcs.astype(np.int32)])
        new_normals = np.concatenate([mesh.normals, mesh.normals[bsrc]])
        new_depthv = np.concatenate([dv, bgd])
    else:
        new_verts = verts
        new_pixel, new_screen = mesh.pixel, mesh.screen
        new_bound, new_dupfrom = mesh.boundary_flags, mesh.duplicated_from
        new_normals, new_depthv = mesh.normals, dv

    for tri in removed:
        dvs = dv[tri]
        if dvs.max() - dvs.min() < 1e-9:
            continue
        mid = 0.5 * (dvs.min() + dvs.max())
        t2 = [nv0 + dup_of[int(v)] if dv[v] < mid else int(v) for v in tri]
        new_tris.append(t2)
    all_tris = [mesh.triangles]
    if readd_plain:
        all_tris.append(np.array(readd_plain, dtype=np.int32))
    if new_tris:
        all_tris.append(np.array(new_tris, dtype=np.int32))
    tris = np.concatenate(all_tris)

    stats = dict(mesh.stats)
    stats["bd_vertices"] = len(dup_entries)
    stats["triangles"] = int(tris.shape[0])
    return ReconMesh(new_verts, tris.astype(np.int32), new_pixel, new_screen,
                     new_bound, new_dupfrom, new_normals, new_depthv,
                     removed_triangles=np.zeros((0, 3), dtype=np.int32),
                     stats=stats, camera=mesh.camera)


def backproject_from_screen(mesh, rows, cols, depth):
    if mesh.camera is None:
        raise ValueError("mesh lacks camera reference for duplication")
    return backproject(mesh.camera, rows, cols, depth)


def merge_meshes(base_verts, base_tris, obj):
    """Append an object mesh; returns (verts, tris, first_obj_tri_index)."""
    off = base_verts.shape[0]
    verts = np.concatenate([base_verts, obj.vertices])
    tris = np.concatenate([base_tris, obj.triangles + off]).astype(np.int32)
    return verts, tris, base_tris.shape[0]


def write_obj(path, verts, tris):
    with open(path, "w") as f:
        for v in verts:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in tris:
            f.write(f"f {int(t[0]) + 1} {int(t[1]) + 1} {int(t[2]) + 1}\n")


def read_obj(path):
    """Minimal OBJ: v and f lines (triangles, 1-based, ignores normals/uvs)."""
    vs, fs = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vs.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    fs.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.asarray(vs, dtype=np.float64),
                   np.asarray(fs, dtype=np.int32))
