"""BVH construction and ray queries.

Median-split BVH built deterministically in numpy; traversal and shadow
batches run as numba kernels. A pure-numpy brute-force route lives at the
bottom as the independent oracle: both routes use the same Moller-Trumbore
formulas and the same inclusive barycentric epsilon, and both break
equal-t ties toward the smaller original triangle id, so their results can
be compared exactly.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

DET_EPS = 1e-14   # parallel-ray rejection on the MT determinant
BARY_EPS = 1e-9   # inclusive edge/corner tolerance so vertex-grazing rays hit


@dataclass
class Bvh:
    nodes_min: np.ndarray
    nodes_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    first: np.ndarray
    count: np.ndarray
    v0: np.ndarray      # permuted triangle layout for traversal locality
    e1: np.ndarray
    e2: np.ndarray
    tri_id: np.ndarray  # permuted index -> original triangle id
    verts: np.ndarray
    tris: np.ndarray
    scene_diag: float

    @property
    def shadow_eps(self):
        # self-intersection offset for shadow rays
        return 1e-4 * self.scene_diag


def build_bvh(mesh, tris=None, leaf_size=4):
    """Accepts a mesh object with .vertices/.triangles or (verts, tris)."""
    if tris is None:
        verts = np.asarray(mesh.vertices, dtype=np.float64)
        tris = np.asarray(mesh.triangles, dtype=np.int64)
    else:
        verts = np.asarray(mesh, dtype=np.float64)
        tris = np.asarray(tris, dtype=np.int64)
    nt = tris.shape[0]
    if nt == 0:
        raise ValueError("empty mesh")

    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    tmin = np.minimum(np.minimum(a, b), c)
    tmax = np.maximum(np.maximum(a, b), c)
    centroid = (tmin + tmax) * 0.5

    order = np.arange(nt, dtype=np.int64)
    nodes_min, nodes_max = [], []
    left, right, first, count = [], [], [], []

    # iterative median split; stack entries are (node index, lo, hi)
    def new_node():
        nodes_min.append(np.zeros(3))
        nodes_max.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        first.append(0)
        count.append(0)
        return len(left) - 1

    root = new_node()
    stack = [(root, 0, nt)]
    while stack:
        ni, lo, hi = stack.pop()
        ids = order[lo:hi]
        nodes_min[ni] = tmin[ids].min(axis=0)
        nodes_max[ni] = tmax[ids].max(axis=0)
        if hi - lo <= leaf_size:
            first[ni] = lo
            count[ni] = hi - lo
            continue
        cen = centroid[ids]
        ext = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(ext))
        if ext[axis] <= 0.0:
            first[ni] = lo
            count[ni] = hi - lo
            continue
        # stable sort on (centroid, id) keeps the build deterministic
        key = np.argsort(cen[:, axis], kind="stable")
        order[lo:hi] = ids[key]
        mid = lo + (hi - lo) // 2
        li = new_node()
        ri = new_node()
        left[ni] = li
        right[ni] = ri
        stack.append((ri, mid, hi))
        stack.append((li, lo, mid))

    perm = order
    v0 = a[perm].copy()
    e1 = (b - a)[perm].copy()
    e2 = (c - a)[perm].copy()
    diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
    return Bvh(np.asarray(nodes_min), np.asarray(nodes_max),
               np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
               np.asarray(first, dtype=np.int64), np.asarray(count, dtype=np.int64),
               v0, e1, e2, perm.copy(), verts, tris.astype(np.int64),
               diag if diag > 0 else 1.0)


@njit(cache=True, fastmath=False)
def _node_hit(nmin, nmax, ox, oy, oz, ix, iy, iz, t_lo, t_hi):
    tx1 = (nmin[0] - ox) * ix
    tx2 = (nmax[0] - ox) * ix
    if tx1 > tx2:
        tx1, tx2 = tx2, tx1
    ty1 = (nmin[1] - oy) * iy
    ty2 = (nmax[1] - oy) * iy
    if ty1 > ty2:
        ty1, ty2 = ty2, ty1
    tz1 = (nmin[2] - oz) * iz
    tz2 = (nmax[2] - oz) * iz
    if tz1 > tz2:
        tz1, tz2 = tz2, tz1
    lo = max(max(tx1, ty1), max(tz1, t_lo))
    hi = min(min(tx2, ty2), min(tz2, t_hi))
    return lo <= hi


@njit(cache=True, parallel=True, fastmath=False)
def _closest_kernel(nmin, nmax, left, right, first, count, v0, e1, e2, tri_id,
                    origins, dirs, t_min, t_max, out_t, out_tri, out_u, out_v):
    n = origins.shape[0]
    for i in prange(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best_t = t_max
        best_id = -1
        best_u = 0.0
        best_v = 0.0
        stack = np.empty(128, dtype=np.int64)
        sp = 0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            ni = stack[sp]
            if not _node_hit(nmin[ni], nmax[ni], ox, oy, oz, ix, iy, iz,
                             t_min, best_t):
                continue
            if left[ni] < 0:
                for k in range(first[ni], first[ni] + count[ni]):
                    px = dy * e2[k, 2] - dz * e2[k, 1]
                    py = dz * e2[k, 0] - dx * e2[k, 2]
                    pz = dx * e2[k, 1] - dy * e2[k, 0]
                    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                    if det > -DET_EPS and det < DET_EPS:
                        continue
                    inv = 1.0 / det
                    tx = ox - v0[k, 0]
                    ty = oy - v0[k, 1]
                    tz = oz - v0[k, 2]
                    u = (tx * px + ty * py + tz * pz) * inv
                    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                        continue
                    qx = ty * e1[k, 2] - tz * e1[k, 1]
                    qy = tz * e1[k, 0] - tx * e1[k, 2]
                    qz = tx * e1[k, 1] - ty * e1[k, 0]
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                        continue
                    t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
                    if t <= t_min or t > t_max:
                        continue
                    tid = tri_id[k]
                    if t < best_t or (t == best_t and
                                      (best_id < 0 or tid < best_id)):
                        best_t = t
                        best_id = tid
                        best_u = u
                        best_v = v
            else:
                stack[sp] = left[ni]
                sp += 1
                stack[sp] = right[ni]
                sp += 1
        out_t[i] = best_t if best_id >= 0 else np.inf
        out_tri[i] = best_id
        out_u[i] = best_u
        out_v[i] = best_v


@njit(cache=True, parallel=True, fastmath=False)
def _occluded_kernel(nmin, nmax, left, right, first, count, v0, e1, e2,
                     origins, dirs, t_min, t_max, out):
    n = origins.shape[0]
    for i in prange(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        hit = False
        stack = np.empty(128, dtype=np.int64)
        stack[0] = 0
        sp = 1
        while sp > 0 and not hit:
            sp -= 1
            ni = stack[sp]
            if not _node_hit(nmin[ni], nmax[ni], ox, oy, oz, ix, iy, iz,
                             t_min, t_max):
                continue
            if left[ni] < 0:
                for k in range(first[ni], first[ni] + count[ni]):
                    px = dy * e2[k, 2] - dz * e2[k, 1]
                    py = dz * e2[k, 0] - dx * e2[k, 2]
                    pz = dx * e2[k, 1] - dy * e2[k, 0]
                    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                    if det > -DET_EPS and det < DET_EPS:
                        continue
                    inv = 1.0 / det
                    tx = ox - v0[k, 0]
                    ty = oy - v0[k, 1]
                    tz = oz - v0[k, 2]
                    u = (tx * px + ty * py + tz * pz) * inv
                    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                        continue
                    qx = ty * e1[k, 2] - tz * e1[k, 1]
                    qy = tz * e1[k, 0] - tx * e1[k, 2]
                    qz = tx * e1[k, 1] - ty * e1[k, 0]
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                        continue
                    t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
                    if t > t_min and t <= t_max:
                        hit = True
                        break
            else:
                stack[sp] = left[ni]
                sp += 1
                stack[sp] = right[ni]
                sp += 1
        out[i] = hit


def intersect_batch(bvh, origins, dirs, t_min=1e-9, t_max=np.inf):
    """Nearest hits for a batch of rays. Returns (t, tri, u, v) with t=inf
    and tri=-1 on miss."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    out_t = np.empty(n)
    out_tri = np.empty(n, dtype=np.int64)
    out_u = np.empty(n)
    out_v = np.empty(n)
    _closest_kernel(bvh.nodes_min, bvh.nodes_max, bvh.left, bvh.right,
                    bvh.first, bvh.count, bvh.v0, bvh.e1, bvh.e2, bvh.tri_id,
                    origins, dirs, float(t_min), float(t_max),
                    out_t, out_tri, out_u, out_v)
    return out_t, out_tri, out_u, out_v


def occluded_batch(bvh, origins, dirs, t_min=None, t_max=np.inf):
    """Any-hit shadow query; t_min defaults to the scene-scaled epsilon."""
    if t_min is None:
        t_min = bvh.shadow_eps
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    out = np.empty(origins.shape[0], dtype=np.bool_)
    _occluded_kernel(bvh.nodes_min, bvh.nodes_max, bvh.left, bvh.right,
                     bvh.first, bvh.count, bvh.v0, bvh.e1, bvh.e2,
                     origins, dirs, float(t_min), float(t_max), out)
    return out


def intersect(bvh, ray, t_max=np.inf, mesh=None, cam=None):
    """Single-ray nearest hit as a Hit record, or None."""
    from .geometry import Hit, world_to_screen

    t, tri, u, v = intersect_batch(bvh, ray.origin[None, :],
                                   ray.direction[None, :], t_max=t_max)
    if tri[0] < 0:
        return None
    tid = int(tri[0])
    i0, i1, i2 = bvh.tris[tid]
    a, b, c = bvh.verts[i0], bvh.verts[i1], bvh.verts[i2]
    gn = np.cross(b - a, c - a)
    gn = gn / np.linalg.norm(gn)
    sn = None
    if mesh is not None and getattr(mesh, "normals", None) is not None:
        w0 = 1.0 - u[0] - v[0]
        sn = (w0 * mesh.normals[i0] + u[0] * mesh.normals[i1]
              + v[0] * mesh.normals[i2])
        sn = sn / np.linalg.norm(sn)
    screen = None
    if cam is not None:
        screen = world_to_screen(ray.origin + float(t[0]) * ray.direction, cam)
    return Hit(t=float(t[0]), tri=tid, u=float(u[0]), v=float(v[0]),
               geom_normal=gn, shading_normal=sn, screen=screen)


# ---- brute-force oracle route (pure numpy, no shared traversal code) ------

def brute_force_batch(verts, tris, origins, dirs, t_min=1e-9, t_max=np.inf,
                      chunk=256):
    """All-triangles nearest-hit loop; the reference the BVH is checked
    against. Identical MT formulas and tie rule (smaller triangle id wins
    exact t ties)."""
    verts = np.asarray(verts, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.int64)
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    v0 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - v0
    e2 = verts[tris[:, 2]] - v0
    n = origins.shape[0]
    out_t = np.full(n, np.inf)
    out_tri = np.full(n, -1, dtype=np.int64)
    out_u = np.zeros(n)
    out_v = np.zeros(n)
    for s in range(0, n, chunk):
        o = origins[s:s + chunk][:, None, :]   # [R,1,3]
        d = dirs[s:s + chunk][:, None, :]
        p = np.cross(d, e2[None, :, :])        # [R,T,3]
        det = np.sum(e1[None, :, :] * p, axis=2)
        ok = np.abs(det) >= DET_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - v0[None, :, :]
        u = np.sum(tv * p, axis=2) * inv
        ok &= (u >= -BARY_EPS) & (u <= 1.0 + BARY_EPS)
        q = np.cross(tv, e1[None, :, :])
        v = np.sum(d * q, axis=2) * inv
        ok &= (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS)
        t = np.sum(e2[None, :, :] * q, axis=2) * inv
        ok &= (t > t_min) & (t <= t_max)
        t = np.where(ok, t, np.inf)
        # nearest hit; exact ties go to the smaller triangle id, matching
        # the BVH kernel's acceptance rule
        best = np.argmin(t, axis=1)
        r = np.arange(t.shape[0])
        bt = t[r, best]
        hit = np.isfinite(bt)
        out_t[s:s + chunk][hit] = bt[hit]
        out_tri[s:s + chunk][hit] = best[hit]
        out_u[s:s + chunk][hit] = u[r, best][hit]
        out_v[s:s + chunk][hit] = v[r, best][hit]
    return out_t, out_tri, out_u, out_v


def brute_force_occluded(verts, tris, origins, dirs, t_min, t_max=np.inf):
    t, tri, _, _ = brute_force_batch(verts, tris, origins, dirs, t_min, t_max)
    return tri >= 0
