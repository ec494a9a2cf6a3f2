import numpy as np

from materialist import bvh as bv
from materialist import synth
from materialist.geometry import CameraModel, Ray, depth_to_mesh
from materialist.bvh import (brute_force_batch, brute_force_occluded,
                             build_bvh, intersect, intersect_batch,
                             occluded_batch)


def _soup(n_tris=5000, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.random((n_tris, 3)) * 4.0 - 2.0
    offs = rng.standard_normal((n_tris, 3, 3)) * 0.08
    verts = (centers[:, None, :] + offs).reshape(-1, 3)
    tris = np.arange(3 * n_tris, dtype=np.int64).reshape(-1, 3)
    return verts, tris


def _rays(n=10000, seed=1):
    rng = np.random.default_rng(seed)
    o = rng.random((n, 3)) * 6.0 - 3.0
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return o, d


def test_single_triangle_root_is_leaf():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    tris = np.array([[0, 1, 2]])
    b = build_bvh(verts, tris)
    assert b.left[0] == -1 and b.count[0] == 1
    t, tri, u, v = intersect_batch(
        b, np.array([[0.2, 0.2, -1.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert tri[0] == 0 and abs(t[0] - 1.0) < 1e-12


def test_bvh_matches_brute_force_on_soup():
    verts, tris = _soup()
    b = build_bvh(verts, tris)
    o, d = _rays()
    t1, id1, u1, v1 = intersect_batch(b, o, d)
    t2, id2, u2, v2 = brute_force_batch(verts, tris, o, d)
    assert np.array_equal(id1, id2)
    hit = id1 >= 0
    assert hit.sum() > 1000
    assert np.allclose(t1[hit], t2[hit], rtol=1e-9, atol=0.0)
    assert np.allclose(u1[hit], u2[hit], rtol=0, atol=1e-9)
    assert np.allclose(v1[hit], v2[hit], rtol=0, atol=1e-9)


def test_bvh_matches_brute_force_on_recon_mesh():
    cam = CameraModel(width=32, height=32)
    depth = np.full((32, 32), 3.0)
    depth[10:22, 10:22] = 1.5
    normal = np.zeros((32, 32, 3))
    normal[:, :, 2] = -1.0
    mesh = depth_to_mesh(depth, normal, cam)
    b = build_bvh(mesh)
    o, d = _rays(4000, seed=5)
    o[:, 2] -= 1.0  # start in front of the scene
    t1, id1, _, _ = intersect_batch(b, o, d)
    t2, id2, _, _ = brute_force_batch(mesh.vertices, mesh.triangles, o, d)
    assert np.array_equal(id1, id2)
    hit = id1 >= 0
    assert np.allclose(t1[hit], t2[hit], rtol=1e-9, atol=0.0)


def test_miss_everything_both_routes():
    verts, tris = _soup(100)
    b = build_bvh(verts, tris)
    o = np.array([[10.0, 10.0, 10.0]])
    d = np.array([[1.0, 0.0, 0.0]])
    t1, id1, _, _ = intersect_batch(b, o, d)
    _, id2, _, _ = brute_force_batch(verts, tris, o, d)
    assert id1[0] == -1 == id2[0] and np.isinf(t1[0])


def test_ray_down_onto_plane_analytic_t():
    quad = synth.make_quad([0.0, 2.0, 0.0], [5.0, 0.0, 0.0], [0.0, 0.0, 5.0])
    b = build_bvh(quad)
    hit = intersect(b, Ray(np.array([0.3, -1.0, 0.2]),
                           np.array([0.0, 1.0, 0.0])))
    assert hit is not None
    assert abs(hit.t - 3.0) < 1e-12
    assert abs(abs(hit.geom_normal[1]) - 1.0) < 1e-12


def test_occlusion_blocker_and_oracle():
    quad = synth.make_quad([0.0, 0.0, 2.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    b = build_bvh(quad)
    o = np.zeros((2, 3))
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    occ = occluded_batch(b, o, d, t_min=1e-6)
    assert occ[0] and not occ[1]
    occ2 = brute_force_occluded(quad.vertices, quad.triangles, o, d, 1e-6)
    assert np.array_equal(occ, occ2)


def test_shadow_epsilon_avoids_self_hit():
    quad = synth.make_quad([0.0, 1.0, 0.0], [3.0, 0.0, 0.0], [0.0, 0.0, 3.0])
    b = build_bvh(quad)
    # origin exactly on the surface, ray leaving along +y
    o = np.array([[0.5, 1.0, 0.5]])
    d = np.array([[0.0, 1.0, 0.0]])
    assert not occluded_batch(b, o, d)[0]


def test_vertex_grazing_ray_hits():
    # ray exactly through a shared vertex must report a hit (inclusive eps)
    verts = np.array([[0.0, 0, 1], [1, 0, 1], [0, 1, 1], [-1, 0, 1], [0, -1, 1]])
    tris = np.array([[0, 1, 2], [0, 3, 4]])
    b = build_bvh(verts, tris)
    t, tri, _, _ = intersect_batch(b, np.array([[0.0, 0.0, 0.0]]),
                                   np.array([[0.0, 0.0, 1.0]]))
    assert tri[0] >= 0 and abs(t[0] - 1.0) < 1e-9
    t2, tri2, _, _ = brute_force_batch(verts, tris, np.array([[0.0, 0.0, 0.0]]),
                                       np.array([[0.0, 0.0, 1.0]]))
    assert tri2[0] == tri[0] and t2[0] == t[0]


def test_t_max_respected():
    quad = synth.make_quad([0.0, 0.0, 5.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    b = build_bvh(quad)
    o = np.zeros((1, 3))
    d = np.array([[0.0, 0.0, 1.0]])
    t, tri, _, _ = intersect_batch(b, o, d, t_max=4.0)
    assert tri[0] == -1
    assert not occluded_batch(b, o, d, t_min=1e-6, t_max=4.0)[0]
