"""Progressive inverse rendering: recover the envmap, then refine materials.

The envmap stage never re-traces rays. A transport matrix W (one render's
worth of visibility and BRDF work, amortized over the run) turns every step
into W @ E plus a small MLP forward, and W @ E is exactly the bilinear
quadrature render of the current radiance, so the loss sequence is
deterministic and the smallest-loss step is unambiguous. The material stage
re-renders differentiably at low spp with fresh sample streams each step and
anchors the maps to the predictions through a weighted L1 consistency term.

Both stages keep the best-so-far checkpoint rather than the last iterate. A
material phase additionally ends with a fixed-seed render comparing that
checkpoint against the phase's starting maps and returns whichever scores
lower, so a run cannot come back worse than it started under the selection
render.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .nets import (AdamState, PosEncoding, adam_step, head_scaled_tanh,
                   head_softplus, init_mlp, lift_mlp, mlp_forward, pos_encode)
from .render import (RenderSettings, build_light_matrix, prepare_shading,
                     render_direct, render_direct_diff)
from .rng import hash_u64
from .scene import EnvMap, HdrPolicy, ImageGrid, hdr_preprocess

STAGES = ("envmap", "materials_joint", "materials_staged")

_ENC = PosEncoding(num_bands=6)
_N_NOISE = 4  # fixed per-texel feature channels of the envmap net


@dataclass
class LossReport:
    step: int
    l_re: float
    l_cons: float
    l_total: float
    wall: float


@dataclass
class OptimizeConfig:
    stage: str = "envmap"
    delta: float = 0.5          # consistency weight
    albedo_scale: float = 2.0   # extra anchor on A during joint runs
    max_steps: int = 500
    window: int = 20            # early-stop lookback
    threshold: float = 0.05     # stop when L_re drops less than this, relative
    spp: int = 4
    seed: int = 0
    zeta: float = 0.3
    lr: float = 1e-3
    env_height: int = 16
    env_width: int = 32
    eval_spp: int = 32          # checkpoint-selection render
    hdr: HdrPolicy = field(default_factory=HdrPolicy)
    experimental_normals: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_steps < 1 or self.spp < 1:
            raise ValueError("max_steps and spp must be >= 1")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")


class DivergenceError(RuntimeError):
    """Loss or gradients went non-finite; carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# ------------------------------------------------------------------ losses

def _as64(x):
    if isinstance(x, ImageGrid):
        return x.f64()
    if isinstance(x, tp.Var):
        return x
    return np.asarray(x, dtype=np.float64)


def loss_l1_l2(a, b, mask=None):
    """mean|a-b| + mean(a-b)^2, optionally restricted to a pixel mask.

    Accepts arrays, ImageGrids, or tape Vars; a Var operand makes the result
    a Var on the same tape. A mask may match the full shape or drop the
    trailing channel axis.
    """
    a = _as64(a)
    b = _as64(b)
    ashape = tuple(tp.value_of(a).shape)
    bshape = tuple(tp.value_of(b).shape)
    if ashape != bshape:
        raise ValueError(f"shape mismatch {ashape} vs {bshape}")
    d = a - b
    if mask is None:
        return tp.vmean(tp.absval(d)) + tp.vmean(d * d)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape == ashape:
        m = mask
    elif mask.shape == ashape[:-1]:
        m = np.broadcast_to(mask[..., None], ashape)
    else:
        raise ValueError(f"mask shape {mask.shape} does not fit {ashape}")
    n = float(m.sum())
    if n == 0:
        raise ValueError("mask selects no pixels")
    sel = tp.where(m, d, 0.0)
    return (tp.vsum(tp.absval(sel)) + tp.vsum(sel * sel)) / n


def consistency_loss(opt, pred, scales):
    """Sum of scale_X * mean-L1(opt[X], pred[X]) over the keys of scales."""
    total = 0.0
    for name, sc in scales.items():
        d = _as64(opt[name]) - _as64(pred[name])
        total = total + sc * tp.vmean(tp.absval(d))
    return total


def silog_loss(pred, gt, valid=None, lam=0.5):
    """sqrt(E[d^2] - lam E[d]^2) with d = log(pred) - log(gt) over the mask.

    lam=1 is fully scale invariant (variance of the log ratio); lam=0 is the
    plain RMS of log ratios.
    """
    pred = np.asarray(_as64(pred))
    gt = np.asarray(_as64(gt))
    if pred.shape != gt.shape:
        raise ValueError("depth maps must share a shape")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    p = pred[valid]
    g = gt[valid]
    if p.size == 0:
        raise ValueError("mask selects no pixels")
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("nonpositive depth inside the mask")
    d = np.log(p) - np.log(g)
    v = np.mean(d * d) - lam * np.mean(d) ** 2
    return float(np.sqrt(max(v, 0.0)))


def early_stop_check(history, window=20, threshold=0.05):
    """True once the last `window` recorded L_re values show a relative
    reduction below `threshold` (increases count as no reduction)."""
    if len(history) < window:
        return False
    old = history[-window]
    new = history[-1]
    return (old - new) <= threshold * abs(old)


# ------------------------------------------------------------ shared setup

def _preproc(img, policy):
    out = tp.minimum(img, policy.clip_max)
    return tp.log1p(out) if policy.use_log1p else out


def _target(bundle, policy):
    return hdr_preprocess(bundle.input, policy).f64().reshape(-1, 3)


def _net_grads(tape, root, lifted):
    grads = tape.backward(root)
    return [grads[v] for v in lifted[0] + lifted[1]]


def _texel_features(h, w, seed):
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    uv = np.stack([(cc + 0.5) / w, (rr + 0.5) / h], axis=-1).reshape(-1, 2)
    enc = pos_encode(uv, _ENC)
    rng = np.random.Generator(np.random.PCG64(int(hash_u64(seed, 0xE14))))
    return np.concatenate([enc, rng.normal(size=(h * w, _N_NOISE))], axis=1)


def _pixel_features(hgt, wid, preds):
    rr, cc = np.meshgrid(np.arange(hgt), np.arange(wid), indexing="ij")
    uv = np.stack([(cc + 0.5) / wid, (rr + 0.5) / hgt], axis=-1).reshape(-1, 2)
    return np.concatenate([pos_encode(uv, _ENC), preds], axis=1)


def history_csv(history):
    """Loss history as plain text. Wall time is deliberately left out so the
    file is byte-stable across reruns of the same seed."""
    lines = ["step,l_re,l_cons,l_total"]
    for r in history:
        lines.append(f"{r.step},{r.l_re:.17g},{r.l_cons:.17g},{r.l_total:.17g}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ envmap stage

def optimize_envmap(bundle, bvh, cfg, mats=None, prep=None, w_mat=None):
    """Fit the envmap net so W @ E matches the preprocessed input image.

    W is built once from the bundle's current material maps (or the mats
    override), so each step is a dense matvec; visibility is baked into W.
    Returns (EnvMap of the smallest-loss step, LossReport history). Radiance
    is positive by construction (softplus head).
    """
    target = _target(bundle, cfg.hdr)
    if prep is None:
        prep = prepare_shading(bundle, bvh, mats=mats)
    if w_mat is None:
        w_mat = build_light_matrix(prep, bvh, cfg.env_height, cfg.env_width)
    feats = _texel_features(cfg.env_height, cfg.env_width, cfg.seed)
    net = init_mlp([feats.shape[1], 128, 128, 128, 128, 3], head="softplus",
                   seed=cfg.seed)
    adam = AdamState(lr=cfg.lr)
    history = []
    best_loss, best_env = np.inf, None
    for step in range(cfg.max_steps):
        t0 = time.perf_counter()
        tape = tp.Tape()
        lifted = lift_mlp(net, tape)
        env = head_softplus(mlp_forward(net, feats, lifted))    # (T, 3)
        cols = [tp.matmul(w_mat[c], env[:, c:c + 1]) for c in range(3)]
        l_re = loss_l1_l2(_preproc(tp.concat(cols, axis=1), cfg.hdr), target)
        lv = float(tp.value_of(l_re))
        if not np.isfinite(lv):
            history.append(LossReport(step, lv, 0.0, lv,
                                      time.perf_counter() - t0))
            raise DivergenceError(f"non-finite loss at step {step}", history)
        if lv < best_loss:
            best_loss, best_env = lv, np.array(tp.value_of(env))
        stop = early_stop_check([r.l_re for r in history] + [lv],
                                cfg.window, cfg.threshold)
        ok = True
        if not stop and step + 1 < cfg.max_steps:
            gs = _net_grads(tape, l_re, lifted)
            ok = adam_step(adam, net.weights + net.biases, gs)
        history.append(LossReport(step, lv, 0.0, lv,
                                  time.perf_counter() - t0))
        if not ok:
            raise DivergenceError(f"non-finite gradients at step {step}",
                                  history)
        if stop:
            break
    rad = best_env.reshape(cfg.env_height, cfg.env_width, 3)
    return EnvMap.from_array(rad), history


# ---------------------------------------------------------- material stage

def _eval_maps(bundle, bvh, env, cfg, prep, maps, anchors, scales, target):
    # fixed-seed selection render; same transform and weights as the run
    q = dict(prep)
    q["albedo"] = np.asarray(maps["albedo"], dtype=np.float64).reshape(-1, 3)
    q["roughness"] = np.asarray(maps["roughness"],
                                dtype=np.float64).reshape(-1)
    q["metallic"] = np.asarray(maps["metallic"], dtype=np.float64).reshape(-1)
    st = RenderSettings(spp=cfg.eval_spp, seed=cfg.seed)
    img = render_direct(bundle, bvh, env, st, prep=q)
    l_re = loss_l1_l2(_preproc(img.f64().reshape(-1, 3), cfg.hdr), target)
    return float(l_re + cfg.delta * consistency_loss(maps, anchors, scales))


def optimize_materials(bundle, bvh, env, cfg, prep=None):
    """Refine A/R/M under a fixed envmap.

    materials_joint optimizes all three through one net; materials_staged
    first optimizes R,M with A frozen at the prediction, then optimizes A
    with R,M frozen at the first phase's result. The consistency anchor uses
    scale albedo_scale on A only in the joint mode. Returns (dict of
    ImageGrids {albedo, roughness, metallic} clamped to [0,1], history).
    """
    if cfg.experimental_normals:
        raise NotImplementedError(
            "normal refinement is parked behind this flag and not built")
    if cfg.stage == "materials_joint":
        plan = ["arm"]
    elif cfg.stage == "materials_staged":
        plan = ["rm", "a"]
    else:
        raise ValueError("cfg.stage selects the envmap stage; use "
                         "materials_joint or materials_staged")
    env = env if isinstance(env, EnvMap) else EnvMap.from_array(np.asarray(env))
    target = _target(bundle, cfg.hdr)
    preds = dict(albedo=bundle.albedo_p, roughness=bundle.roughness_p,
                 metallic=bundle.metallic_p)
    if prep is None:
        prep = prepare_shading(bundle, bvh, mats=preds)
    hgt, wid = prep["shape"]
    a_p = bundle.albedo_p.f64().reshape(-1, 3)
    r_p = bundle.roughness_p.f64().reshape(-1)
    m_p = bundle.metallic_p.f64().reshape(-1)
    m_all = np.concatenate([a_p, r_p[:, None], m_p[:, None]], axis=1)
    feats = _pixel_features(hgt, wid, m_all)
    anchors = dict(albedo=a_p, roughness=r_p, metallic=m_p)

    history = []
    state = dict(albedo=a_p.copy(), roughness=r_p.copy(), metallic=m_p.copy())
    gstep = 0
    for mode in plan:
        if mode == "arm":
            m_sub = m_all
            scales = {"albedo": cfg.albedo_scale, "roughness": 1.0,
                      "metallic": 1.0}
        elif mode == "rm":
            m_sub = m_all[:, 3:5]
            scales = {"roughness": 1.0, "metallic": 1.0}
        else:
            m_sub = m_all[:, 0:3]
            scales = {"albedo": 1.0}
        net = init_mlp([feats.shape[1], 128, 128, 128, 128, m_sub.shape[1]],
                       head="scaled_tanh", seed=cfg.seed)
        adam = AdamState(lr=cfg.lr)
        phase_lre = []
        first, best = None, None
        for k in range(cfg.max_steps):
            t0 = time.perf_counter()
            tape = tp.Tape()
            lifted = lift_mlp(net, tape)
            out = tp.clip(head_scaled_tanh(mlp_forward(net, feats, lifted),
                                           m_sub, cfg.zeta), 0.0, 1.0)
            cur = dict(state)
            if mode == "arm":
                cur["albedo"] = out[:, 0:3]
                cur["roughness"] = out[:, 3]
                cur["metallic"] = out[:, 4]
            elif mode == "rm":
                cur["roughness"] = out[:, 0]
                cur["metallic"] = out[:, 1]
            else:
                cur["albedo"] = out
            st = RenderSettings(spp=cfg.spp,
                                seed=int(hash_u64(cfg.seed, 0x5E9, gstep)))
            img, _ = render_direct_diff(bundle, bvh, env, st, tape,
                                        dict(cur), prep=prep)
            l_re = loss_l1_l2(_preproc(img, cfg.hdr), target)
            l_cons = consistency_loss(cur, anchors, scales)
            l_total = l_re + cfg.delta * l_cons
            lre_v = float(tp.value_of(l_re))
            lc_v = float(tp.value_of(l_cons))
            lt_v = float(tp.value_of(l_total))
            if not np.isfinite(lt_v):
                history.append(LossReport(gstep, lre_v, lc_v, lt_v,
                                          time.perf_counter() - t0))
                raise DivergenceError(f"non-finite loss at step {gstep}",
                                      history)
            snap = {n: np.array(tp.value_of(v)) for n, v in cur.items()}
            if first is None:
                first = (lt_v, snap)
            if best is None or lt_v < best[0]:
                best = (lt_v, snap)
            phase_lre.append(lre_v)
            stop = early_stop_check(phase_lre, cfg.window, cfg.threshold)
            ok = True
            if not stop and k + 1 < cfg.max_steps:
                gs = _net_grads(tape, l_total, lifted)
                ok = adam_step(adam, net.weights + net.biases, gs)
            history.append(LossReport(gstep, lre_v, lc_v, lt_v,
                                      time.perf_counter() - t0))
            gstep += 1
            if not ok:
                raise DivergenceError(
                    f"non-finite gradients at step {gstep - 1}", history)
            if stop:
                break
        lt_best = _eval_maps(bundle, bvh, env, cfg, prep, best[1], anchors,
                             scales, target)
        lt_first = _eval_maps(bundle, bvh, env, cfg, prep, first[1], anchors,
                              scales, target)
        chosen = best[1] if lt_best <= lt_first else first[1]
        state = {n: np.array(v) for n, v in chosen.items()}

    result = dict(
        albedo=ImageGrid.from_array(state["albedo"].reshape(hgt, wid, 3)),
        roughness=ImageGrid.from_array(state["roughness"].reshape(hgt, wid)),
        metallic=ImageGrid.from_array(state["metallic"].reshape(hgt, wid)))
    return result, history
