"""Inverse-stage tests: loss algebra against closed forms, early stopping,
envmap recovery round trips through the transport matrix, and material
refinement behavior (anchoring, improvement, checkpoint selection)."""

import numpy as np
import pytest

from materialist import tape as tp
from materialist.geometry import CameraModel
from materialist.inverse import (DivergenceError, LossReport, OptimizeConfig,
                                 consistency_loss, early_stop_check,
                                 history_csv, loss_l1_l2, optimize_envmap,
                                 optimize_materials, silog_loss)
from materialist.render import (RenderSettings, build_light_matrix,
                                prepare_shading, render_direct)
from materialist.scene import HdrPolicy, hdr_preprocess
from materialist.synth import (bundle_from_gbuffer, checker_world, make_quad,
                               perturb_maps, smooth_envmap, trace_gbuffer)


def tiny_world(width=24, height=24, env_seed=11, pred=None, input_img=None,
               spp=64):
    """Floor-plus-wall layout under a small 4x8 envmap; input rendered from
    the true maps, stored predictions replaceable."""
    cam = CameraModel(fov_deg=35.0, width=width, height=height)
    floor = dict(mesh=make_quad([0.0, 1.0, 6.0], [6.0, 0.0, 0.0],
                                [0.0, 0.0, 6.0]),
                 albedo=lambda p: checker_world(p, 1.5, [0.8, 0.7, 0.6],
                                                [0.25, 0.3, 0.35]),
                 roughness=0.7, metallic=0.0)
    wall = dict(mesh=make_quad([0.0, -1.5, 9.0], [6.0, 0.0, 0.0],
                               [0.0, -3.5, 0.0]),
                albedo=[0.6, 0.5, 0.45], roughness=0.5, metallic=0.0)
    env = smooth_envmap(h=4, w=8, seed=env_seed, peak=5.0)
    gbuf, _ = trace_gbuffer([floor, wall], cam)
    bundle, _, bvh = bundle_from_gbuffer(gbuf, cam, env, spp=spp, seed=7,
                                         pred_maps=pred, input_img=input_img)
    return bundle, bvh, gbuf


@pytest.fixture(scope="module")
def world24():
    return tiny_world()


def w_rerender(w_mat, env):
    e = env.radiance.reshape(-1, 3).astype(np.float64)
    return np.stack([w_mat[c] @ e[:, c] for c in range(3)], axis=1)


# ------------------------------------------------------------------ losses

def test_loss_l1_l2_constant_difference():
    a = np.full((6, 5, 3), 0.9)
    b = a - 0.5
    assert loss_l1_l2(a, b) == 0.75
    assert loss_l1_l2(b, a) == 0.75
    assert loss_l1_l2(a, a) == 0.0


def test_loss_l1_l2_masked():
    a = np.array([[1.0, 0.0], [-2.0, 3.0]])
    b = np.zeros((2, 2))
    mask = np.array([[True, False], [False, True]])
    # (|1| + |3|)/2 + (1 + 9)/2
    assert loss_l1_l2(a, b, mask) == 7.0
    with pytest.raises(ValueError):
        loss_l1_l2(a, b, np.zeros((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        loss_l1_l2(a, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        loss_l1_l2(a, b, np.ones((4, 4), dtype=bool))


def test_loss_l1_l2_mask_broadcasts_over_channels():
    a = np.zeros((2, 2, 3))
    a[0, 0] = [0.5, 1.0, 1.5]
    mask = np.array([[True, False], [False, False]])
    got = loss_l1_l2(a, np.zeros_like(a), mask)
    assert np.isclose(got, (0.5 + 1.0 + 1.5) / 3 + (0.25 + 1.0 + 2.25) / 3,
                      rtol=1e-14)


def test_loss_l1_l2_gradients():
    rng = np.random.default_rng(5)
    b = rng.uniform(0.0, 1.0, (4, 3))
    a0 = b + rng.uniform(0.2, 0.6, (4, 3)) * rng.choice([-1.0, 1.0], (4, 3))
    err = tp.grad_check(lambda x: loss_l1_l2(x, b), a0, step=1e-6)
    assert err < 1e-6
    mask = np.array([True, False, True, True])
    err = tp.grad_check(lambda x: loss_l1_l2(x, b, mask), a0, step=1e-6)
    assert err < 1e-6
    # Var and numpy paths produce the identical value
    t = tp.Tape()
    assert float(tp.value_of(loss_l1_l2(t.var(a0), b))) == loss_l1_l2(a0, b)


def test_consistency_loss_values():
    opt = dict(albedo=np.full((4, 4, 3), 0.6), roughness=np.full((4, 4), 0.5))
    pred = dict(albedo=np.full((4, 4, 3), 0.5), roughness=np.full((4, 4), 0.5))
    got = consistency_loss(opt, pred, {"albedo": 1.0, "roughness": 1.0})
    assert abs(got - 0.1) < 1e-12
    assert consistency_loss(pred, pred, {"albedo": 1.0, "roughness": 1.0}) == 0
    more = consistency_loss(opt, pred, {"albedo": 2.0, "roughness": 1.0})
    assert more > got


def test_silog_constant_ratio():
    rng = np.random.default_rng(0)
    gt = rng.uniform(0.5, 8.0, (16, 16))
    assert silog_loss(gt, gt) == 0.0
    got = silog_loss(2.0 * gt, gt, lam=0.5)
    assert abs(got - np.log(2.0) * np.sqrt(0.5)) < 1e-9


def test_silog_scale_invariance_at_lam_one():
    rng = np.random.default_rng(3)
    gt = rng.uniform(0.2, 9.0, (12, 12))
    pred = gt * rng.uniform(0.6, 1.8, (12, 12))
    s1 = silog_loss(pred, gt, lam=1.0)
    s2 = silog_loss(3.7 * pred, gt, lam=1.0)
    assert abs(s1 - s2) < 1e-9
    # lam = 0.5 keeps the mean term and is not scale invariant
    assert abs(silog_loss(pred, gt) - silog_loss(3.7 * pred, gt)) > 1e-3


def test_silog_rejects_bad_depth():
    gt = np.ones((4, 4))
    bad = gt.copy()
    bad[1, 1] = 0.0
    with pytest.raises(ValueError):
        silog_loss(bad, gt)
    mask = np.ones((4, 4), dtype=bool)
    mask[1, 1] = False
    assert silog_loss(bad, gt, valid=mask) == 0.0
    with pytest.raises(ValueError):
        silog_loss(gt, gt, valid=np.zeros((4, 4), dtype=bool))


def test_early_stop_check():
    decreasing = [100.0 * 0.9 ** k for k in range(25)]
    assert not early_stop_check(decreasing)
    assert early_stop_check([3.0] * 20)
    assert not early_stop_check([3.0] * 19)
    rising = list(np.linspace(1.0, 2.0, 20))
    assert early_stop_check(rising)


def test_optimize_config_validation():
    with pytest.raises(ValueError):
        OptimizeConfig(stage="both")
    with pytest.raises(ValueError):
        OptimizeConfig(delta=-0.1)
    with pytest.raises(ValueError):
        OptimizeConfig(window=0)
    with pytest.raises(ValueError):
        OptimizeConfig(zeta=0.0)


# ------------------------------------------------------------ envmap stage

def test_envmap_recovery_tiny(world24):
    bundle, bvh, _ = world24
    prep = prepare_shading(bundle, bvh)
    w = build_light_matrix(prep, bvh, 4, 8)
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e-2,
                         max_steps=250, seed=3)
    est, hist = optimize_envmap(bundle, bvh, cfg, prep=prep, w_mat=w)
    assert np.all(est.radiance >= 0)
    img = w_rerender(w, est)
    mse = np.mean((img - bundle.input.f64().reshape(-1, 3)) ** 2)
    assert mse < 0.01
    # the returned envmap is the smallest-loss step
    target = hdr_preprocess(bundle.input, HdrPolicy()).f64().reshape(-1, 3)
    got = float(loss_l1_l2(np.minimum(img, 10.0), target))
    assert got <= min(r.l_re for r in hist) + 1e-4
    for r in hist:
        assert r.l_cons == 0.0 and r.l_total == r.l_re


def test_envmap_determinism(world24):
    bundle, bvh, _ = world24
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e-2,
                         max_steps=40, seed=9)
    e1, h1 = optimize_envmap(bundle, bvh, cfg)
    e2, h2 = optimize_envmap(bundle, bvh, cfg)
    assert [r.l_re for r in h1] == [r.l_re for r in h2]
    assert np.array_equal(e1.radiance, e2.radiance)


def test_envmap_zero_target():
    bundle, bvh, _ = tiny_world(
        input_img=np.zeros((24, 24, 3), dtype=np.float32))
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=0.05,
                         max_steps=400, seed=3)
    est, hist = optimize_envmap(bundle, bvh, cfg)
    assert est.radiance.mean() < 1e-3


def test_envmap_with_materials_beats_prior(world24):
    bundle, bvh, _ = world24
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e-2,
                         max_steps=250, seed=3)
    prep_t = prepare_shading(bundle, bvh)
    w_t = build_light_matrix(prep_t, bvh, 4, 8)
    est_t, _ = optimize_envmap(bundle, bvh, cfg, prep=prep_t, w_mat=w_t)
    prior = dict(albedo=np.full((24, 24, 3), 0.5),
                 roughness=np.full((24, 24), 0.5),
                 metallic=np.full((24, 24), 0.1))
    prep_p = prepare_shading(bundle, bvh, mats=prior)
    w_p = build_light_matrix(prep_p, bvh, 4, 8)
    est_p, _ = optimize_envmap(bundle, bvh, cfg, prep=prep_p, w_mat=w_p)
    inp = bundle.input.f64().reshape(-1, 3)
    mse_t = np.mean((w_rerender(w_t, est_t) - inp) ** 2)
    mse_p = np.mean((w_rerender(w_p, est_p) - inp) ** 2)
    assert mse_t < mse_p


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_envmap_divergence_aborts_with_history(world24):
    bundle, bvh, _ = world24
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e160,
                         max_steps=10, seed=0)
    with pytest.raises(DivergenceError) as exc:
        optimize_envmap(bundle, bvh, cfg)
    assert len(exc.value.history) >= 1


def test_envmap_early_stop_triggers(world24):
    bundle, bvh, _ = world24
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e-2,
                         max_steps=40, seed=3, window=5, threshold=0.9)
    _, hist = optimize_envmap(bundle, bvh, cfg)
    assert len(hist) < 40


def test_envmap_log1p_policy_smoke(world24):
    bundle, bvh, _ = world24
    cfg = OptimizeConfig(stage="envmap", env_height=4, env_width=8, lr=1e-2,
                         max_steps=5, seed=3,
                         hdr=HdrPolicy(clip_max=2.0, use_log1p=True))
    est, hist = optimize_envmap(bundle, bvh, cfg)
    assert len(hist) == 5 and np.all(est.radiance >= 0)


# ---------------------------------------------------------- material stage

@pytest.fixture(scope="module")
def perturbed16():
    cam = CameraModel(fov_deg=35.0, width=16, height=16)
    floor = dict(mesh=make_quad([0.0, 1.0, 6.0], [6.0, 0.0, 0.0],
                                [0.0, 0.0, 6.0]),
                 albedo=lambda p: checker_world(p, 1.5, [0.8, 0.7, 0.6],
                                                [0.25, 0.3, 0.35]),
                 roughness=0.7, metallic=0.0)
    gbuf, _ = trace_gbuffer([floor], cam)
    pred = perturb_maps(gbuf, seed=2, sigma=0.05)
    env = smooth_envmap(h=4, w=8, seed=11, peak=5.0)
    bundle, _, bvh = bundle_from_gbuffer(gbuf, cam, env, spp=32, seed=7,
                                         pred_maps=pred)
    return bundle, bvh, gbuf


def map_dist(maps, bundle, name):
    return float(np.mean(np.abs(maps[name].f64()
                                - getattr(bundle, name + "_p").f64())))


def test_materials_anchor_dominated(perturbed16):
    bundle, bvh, _ = perturbed16
    cfg = OptimizeConfig(stage="materials_joint", delta=1000.0, max_steps=15,
                         spp=2, seed=1, lr=3e-3, eval_spp=8)
    maps, hist = optimize_materials(bundle, bvh, bundle.envmap, cfg)
    for name in ("albedo", "roughness", "metallic"):
        assert map_dist(maps, bundle, name) < 0.01
    for r in hist:
        assert abs(r.l_total - (r.l_re + 1000.0 * r.l_cons)) <= 1e-9


def test_materials_anchor_monotone(perturbed16):
    bundle, bvh, _ = perturbed16
    dists = []
    for delta in (0.0, 2.0):
        cfg = OptimizeConfig(stage="materials_joint", delta=delta,
                             max_steps=15, spp=4, seed=1, lr=1e-2, eval_spp=8)
        maps, _ = optimize_materials(bundle, bvh, bundle.envmap, cfg)
        dists.append(sum(map_dist(maps, bundle, n)
                         for n in ("albedo", "roughness", "metallic")))
    assert dists[1] <= dists[0]


def test_materials_improve_biased_albedo():
    cam = CameraModel(fov_deg=35.0, width=24, height=24)
    floor = dict(mesh=make_quad([0.0, 1.0, 6.0], [6.0, 0.0, 0.0],
                                [0.0, 0.0, 6.0]),
                 albedo=lambda p: checker_world(p, 1.5, [0.8, 0.7, 0.6],
                                                [0.25, 0.3, 0.35]),
                 roughness=0.7, metallic=0.0)
    wall = dict(mesh=make_quad([0.0, -1.5, 9.0], [6.0, 0.0, 0.0],
                               [0.0, -3.5, 0.0]),
                albedo=[0.6, 0.5, 0.45], roughness=0.5, metallic=0.0)
    gbuf, _ = trace_gbuffer([floor, wall], cam)
    pred = dict(albedo=np.clip(gbuf["albedo"] - 0.2, 0.0, 1.0),
                roughness=gbuf["roughness"], metallic=gbuf["metallic"])
    env = smooth_envmap(h=4, w=8, seed=11, peak=5.0)
    bundle, _, bvh = bundle_from_gbuffer(gbuf, cam, env, spp=64, seed=7,
                                         pred_maps=pred)
    inp = bundle.input.f64()

    def eval_mse(a, r, m):
        # same sample streams as the input render, so MC noise cancels for
        # matching maps and the residual is map error
        img = render_direct(bundle, bvh, bundle.envmap,
                            RenderSettings(spp=64, seed=7),
                            mats=dict(albedo=a, roughness=r, metallic=m))
        return float(np.mean((img.f64() - inp) ** 2))

    assert eval_mse(gbuf["albedo"], gbuf["roughness"], gbuf["metallic"]) == 0
    mse0 = eval_mse(bundle.albedo_p.f64(), bundle.roughness_p.f64(),
                    bundle.metallic_p.f64())
    cfg = OptimizeConfig(stage="materials_joint", delta=0.0, max_steps=80,
                         spp=16, seed=2, lr=1e-2, eval_spp=64, window=80)
    maps, _ = optimize_materials(bundle, bvh, bundle.envmap, cfg)
    mse1 = eval_mse(maps["albedo"].f64(), maps["roughness"].f64(),
                    maps["metallic"].f64())
    assert mse1 < 0.6 * mse0
    hit = gbuf["hit"]
    err0 = np.mean(np.abs(bundle.albedo_p.f64()[hit] - gbuf["albedo"][hit]))
    err1 = np.mean(np.abs(maps["albedo"].f64()[hit] - gbuf["albedo"][hit]))
    assert err1 < err0


def test_materials_exact_predictions_never_end_worse(perturbed16):
    bundle, bvh, gbuf = perturbed16
    # rebuild with exact predictions
    env = smooth_envmap(h=4, w=8, seed=11, peak=5.0)
    cam = bundle.camera
    exact, _, bvh2 = bundle_from_gbuffer(gbuf, cam, env, spp=32, seed=7)
    cfg = OptimizeConfig(stage="materials_joint", delta=0.0, max_steps=20,
                         spp=8, seed=4, lr=1e-2, eval_spp=32)
    maps, hist = optimize_materials(exact, bvh2, exact.envmap, cfg)
    target = hdr_preprocess(exact.input, cfg.hdr).f64()

    def eval_lre(a, r, m):
        img = render_direct(exact, bvh2, exact.envmap,
                            RenderSettings(spp=cfg.eval_spp, seed=cfg.seed),
                            mats=dict(albedo=a, roughness=r, metallic=m))
        return float(loss_l1_l2(np.minimum(img.f64(), 10.0), target))

    final = eval_lre(maps["albedo"].f64(), maps["roughness"].f64(),
                     maps["metallic"].f64())
    init = eval_lre(exact.albedo_p.f64(), exact.roughness_p.f64(),
                    exact.metallic_p.f64())
    assert final <= init + 1e-12
    best = np.minimum.accumulate([r.l_re for r in hist])
    assert np.all(np.diff(best) <= 0)


def test_materials_staged_phases_and_anchor(perturbed16):
    bundle, bvh, _ = perturbed16
    cfg = OptimizeConfig(stage="materials_staged", delta=1000.0, max_steps=6,
                         spp=2, seed=1, lr=3e-3, eval_spp=8)
    maps, hist = optimize_materials(bundle, bvh, bundle.envmap, cfg)
    assert [r.step for r in hist] == list(range(12))
    for name in ("albedo", "roughness", "metallic"):
        arr = maps[name].f64()
        assert arr.min() >= 0.0 and arr.max() <= 1.0
        assert map_dist(maps, bundle, name) < 0.01


def test_materials_determinism(perturbed16):
    bundle, bvh, _ = perturbed16
    cfg = OptimizeConfig(stage="materials_joint", delta=0.5, max_steps=8,
                         spp=2, seed=6, lr=3e-3, eval_spp=8)
    m1, h1 = optimize_materials(bundle, bvh, bundle.envmap, cfg)
    m2, h2 = optimize_materials(bundle, bvh, bundle.envmap, cfg)
    assert [(r.l_re, r.l_cons, r.l_total) for r in h1] == \
        [(r.l_re, r.l_cons, r.l_total) for r in h2]
    for name in ("albedo", "roughness", "metallic"):
        assert np.array_equal(m1[name].data, m2[name].data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_materials_divergence_and_flags(perturbed16):
    bundle, bvh, _ = perturbed16
    cfg = OptimizeConfig(stage="materials_joint", delta=0.0, max_steps=5,
                         spp=1, seed=0, lr=1e160, eval_spp=2)
    with pytest.raises(DivergenceError) as exc:
        optimize_materials(bundle, bvh, bundle.envmap, cfg)
    assert len(exc.value.history) >= 1
    cfg2 = OptimizeConfig(stage="materials_joint", experimental_normals=True)
    with pytest.raises(NotImplementedError):
        optimize_materials(bundle, bvh, bundle.envmap, cfg2)
    cfg3 = OptimizeConfig(stage="envmap")
    with pytest.raises(ValueError):
        optimize_materials(bundle, bvh, bundle.envmap, cfg3)


def test_history_csv_shape():
    hist = [LossReport(0, 1.0, 0.5, 1.25, 0.01),
            LossReport(1, 0.5, 0.25, 0.625, 0.02)]
    text = history_csv(hist)
    lines = text.strip().split("\n")
    assert lines[0] == "step,l_re,l_cons,l_total"
    assert len(lines) == 3
    assert "wall" not in text
    assert lines[1].startswith("0,1,")
