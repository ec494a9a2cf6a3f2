"""HTTP edit service: bundle summary, map downloads, and a job queue.

All endpoints live under /v1. Renders and edits are asynchronous: POST
/v1/edits returns 202 with a job id; a single daemon worker drains the
queue so at most one render runs at a time while request handling stays
concurrent. The on-disk bundle is never written; results are in-memory
artifacts keyed by job id.

Error model: 400 carries {"field", "message"} so a client can attach the
complaint to the offending control; 404 for unknown jobs/maps or a result
polled before the job is done; 409 when the bundle has no envmap yet.
"""

import base64
import io
import itertools
import queue
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import storage
from .bvh import build_bvh
from .edit import (BackgroundAlbedo, EditRequest, RefractionDistances,
                   apply_opaque_edit, hsv_albedo_edit, insert_object,
                   refraction_distance_oracle, relight,
                   transparency_composite)
from .geometry import depth_to_mesh
from .render import RenderSettings, render_direct
from .scene import EnvMap, load_bundle
from .shading import GlassParams, SurfaceParams
from .synth import icosphere

EDIT_KINDS = ("opaque", "hsv", "relight", "insert", "transparency")
JOB_KINDS = ("optimize_env", "optimize_mat", "render", "edit")
PREVIEW_SPP = 2
FINAL_SPP = 32
MAP_NAMES = ("input", "albedo", "roughness", "metallic", "normal", "depth",
             "envmap")


@dataclass
class Job:
    id: str
    kind: str                       # one of JOB_KINDS
    status: str = "queued"          # queued -> running -> done | failed
    progress: float = 0.0
    result: object = None           # ImageGrid once done
    error: str = None
    loss_tail: list = field(default_factory=list)

    _ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}

    def advance(self, status):
        if self._ORDER[status] < self._ORDER[self.status]:
            raise RuntimeError(f"job {self.id}: {self.status} -> {status}")
        self.status = status

    def summary(self):
        return dict(id=self.id, kind=self.kind, status=self.status,
                    progress=self.progress, loss_tail=list(self.loss_tail),
                    error=self.error)


def bad_request(fld, message):
    return HTTPException(status_code=400,
                         detail=dict(field=fld, message=message))


def _number(params, key, lo, hi, default=None, fld=None):
    v = params.get(key, default)
    if v is None:
        raise bad_request(fld or key, "required")
    if not isinstance(v, (int, float)) or isinstance(v, bool) \
            or not np.isfinite(v) or not (lo <= v <= hi):
        raise bad_request(fld or key, f"must be a number in [{lo}, {hi}]")
    return float(v)


def _rgb01(params, key, default=None, fld=None):
    v = params.get(key, default)
    if isinstance(v, (int, float)):
        v = [v, v, v]
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or not all(isinstance(c, (int, float)) and np.isfinite(c)
                       and 0.0 <= c <= 1.0 for c in v)):
        raise bad_request(fld or key, "must be 3 numbers in [0, 1]")
    return np.asarray(v, dtype=np.float64)


class EngineState:
    """Loaded bundle, its BVH, the mask registry, and the job queue."""

    def __init__(self, bundle, bvh, preview_spp=PREVIEW_SPP,
                 final_spp=FINAL_SPP):
        self.bundle = bundle
        self.bvh = bvh
        self.preview_spp = preview_spp
        self.final_spp = final_spp
        self.masks = dict(bundle.masks)        # in-memory only
        self.jobs = {}
        self.lock = threading.Lock()
        self.queue = queue.Queue()
        self._ids = itertools.count(1)
        self._preview = None
        self.worker = threading.Thread(target=self._drain, daemon=True)
        self.worker.start()

    @property
    def optimized(self):
        return self.bundle.envmap is not None

    def preview_png_b64(self):
        if self._preview is None:
            img = render_direct(self.bundle, self.bvh, self.bundle.envmap,
                                RenderSettings(spp=self.preview_spp, seed=0))
            self._preview = base64.b64encode(
                storage.png_preview_bytes(img.f64())).decode()
        return self._preview

    def submit(self, kind, runner):
        job = Job(id=f"job-{next(self._ids):04d}", kind=kind)
        with self.lock:
            self.jobs[job.id] = job
        self.queue.put((job, runner))
        return job

    def _drain(self):
        while True:
            job, runner = self.queue.get()
            with self.lock:
                job.advance("running")
                job.progress = 0.5
            try:
                result = runner()
                with self.lock:
                    job.result = result
                    job.progress = 1.0
                    job.advance("done")
            except Exception as e:          # job errors belong to the job
                with self.lock:
                    job.error = str(e)
                    job.advance("failed")
            self.queue.task_done()


def _decode_mask_png(b64, shape):
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("L")
    except Exception:
        raise bad_request("mask_png_b64", "not a decodable PNG")
    m = np.asarray(img, dtype=np.float64) / 255.0
    if m.shape != shape:
        raise bad_request("mask_png_b64",
                          f"mask is {m.shape}, bundle is {shape}")
    return m > 0.5


def _resolve_mask(state, payload, required):
    shape = (state.bundle.height, state.bundle.width)
    if payload.get("mask_png_b64"):
        m = _decode_mask_png(payload["mask_png_b64"], shape)
        name = payload.get("mask_name")
        if name:
            from .scene import ImageGrid
            state.masks[str(name)] = ImageGrid.from_array(
                m.astype(np.float32))
        return m
    name = payload.get("mask")
    if name is None:
        if required:
            raise bad_request("mask", "required for this edit kind")
        return None
    if str(name) not in state.masks:
        raise bad_request("mask", f"unknown mask {name!r}")
    return state.masks[str(name)].data > 0.5


def _build_runner(state, kind, payload, st):
    """Validate the payload now (HTTP errors), return the deferred work."""
    bundle, bvh = state.bundle, state.bvh
    params = payload.get("params") or {}
    if not isinstance(params, dict):
        raise bad_request("params", "must be an object")

    if kind == "opaque":
        mask = _resolve_mask(state, payload, required=True)
        clean = {}
        for op, lo, hi in (("set", 0.0, 1.0), ("offset", -1.0, 1.0)):
            if op not in params:
                continue
            if not isinstance(params[op], dict):
                raise bad_request(op, "must be an object")
            vals = {}
            for name, v in params[op].items():
                if name not in ("albedo", "roughness", "metallic"):
                    raise bad_request(f"{op}.{name}", "unknown material map")
                if name == "albedo" and isinstance(v, (list, tuple)):
                    if op == "set":
                        vals[name] = _rgb01(params[op], name,
                                            fld=f"{op}.{name}")
                    else:
                        if (len(v) != 3 or not all(
                                isinstance(c, (int, float))
                                and np.isfinite(c) and lo <= c <= hi
                                for c in v)):
                            raise bad_request(f"{op}.{name}",
                                              f"must be in [{lo}, {hi}]")
                        vals[name] = np.asarray(v, dtype=np.float64)
                else:
                    vals[name] = _number(params[op], name, lo, hi,
                                         fld=f"{op}.{name}")
            clean[op] = vals
        if not clean:
            raise bad_request("params", "opaque edit needs set/offset")
        req = EditRequest(kind="opaque", mask=mask, params=clean)
        return lambda: render_direct(apply_opaque_edit(bundle, req), bvh,
                                     bundle.envmap, st)

    if kind == "hsv":
        mask = _resolve_mask(state, payload, required=True)
        dh = _number(params, "dh", -360.0, 360.0, default=0.0)
        ss = _number(params, "ss", 0.0, 4.0, default=1.0)
        sv = _number(params, "sv", 0.0, 4.0, default=1.0)
        return lambda: render_direct(
            hsv_albedo_edit(bundle, mask, dh=dh, ss=ss, sv=sv), bvh,
            bundle.envmap, st)

    if kind == "relight":
        scale = _number(params, "scale", 1e-3, 100.0, default=1.0)
        env = EnvMap(scale * bundle.envmap.f64())
        return lambda: relight(bundle, bvh, env, st)

    if kind == "insert":
        sph = params.get("sphere")
        if not isinstance(sph, dict):
            raise bad_request("sphere", "required: {center, radius}")
        center = sph.get("center")
        if (not isinstance(center, (list, tuple)) or len(center) != 3
                or not all(isinstance(c, (int, float)) and np.isfinite(c)
                           for c in center)):
            raise bad_request("sphere.center", "must be 3 finite numbers")
        radius = _number(sph, "radius", 1e-3, 100.0, fld="sphere.radius")
        mat = SurfaceParams(albedo=_rgb01(params, "albedo", default=0.5),
                            roughness=_number(params, "roughness", 0.0, 1.0,
                                              default=0.5),
                            metallic=_number(params, "metallic", 0.0, 1.0,
                                             default=0.0))
        mesh = icosphere([float(c) for c in center], radius, subdivisions=3)
        return lambda: insert_object(bundle, bvh, mesh, None, mat, st)

    if kind == "transparency":
        mask = _resolve_mask(state, payload, required=True)
        glass = GlassParams(
            transmission=_number(params, "transmission", 0.0, 1.0,
                                 default=1.0),
            eta=_number(params, "eta", 0.1, 5.0, default=1.5))
        a_bg = BackgroundAlbedo.from_array(np.broadcast_to(
            _rgb01(params, "a_bg", default=1.0),
            (bundle.height, bundle.width, 3)))
        sph = params.get("sphere")
        if isinstance(sph, dict):
            center = sph.get("center")
            if (not isinstance(center, (list, tuple)) or len(center) != 3
                    or not all(isinstance(c, (int, float))
                               and np.isfinite(c) for c in center)):
                raise bad_request("sphere.center", "must be 3 finite numbers")
            radius = _number(sph, "radius", 1e-3, 100.0, fld="sphere.radius")
            mesh = icosphere([float(c) for c in center], radius,
                             subdivisions=3)
            dists = refraction_distance_oracle(mesh, None, bundle.camera,
                                               mask)
        else:
            d1c = _number(params, "d1_const", 0.0, 1e6, default=None,
                          fld="d1_const")
            d1 = np.where(mask, d1c, 0.0)
            dists = RefractionDistances(d1=d1, d2=np.zeros_like(d1),
                                        source="provided map")
        return lambda: transparency_composite(bundle, bvh, bundle.envmap,
                                              mask, glass, dists, a_bg, st)

    raise bad_request("kind", f"must be one of {EDIT_KINDS}")


def make_app(bundle_path, preview_spp=PREVIEW_SPP, final_spp=FINAL_SPP):
    bundle = load_bundle(bundle_path)
    mesh = depth_to_mesh(bundle.depth_p, bundle.normal_p, bundle.camera,
                         valid=bundle.valid_mask())
    bvh = build_bvh(mesh.vertices, mesh.triangles)
    state = EngineState(bundle, bvh, preview_spp, final_spp)
    app = FastAPI(title="materialist", version="v1")
    app.state.engine = state

    def require_optimized():
        if not state.optimized:
            raise HTTPException(status_code=409,
                                detail="bundle not optimized: run the "
                                       "envmap stage first")

    @app.get("/v1/scene")
    def scene():
        require_optimized()
        b = state.bundle
        return dict(width=b.width, height=b.height,
                    fov_deg=b.camera.fov_deg,
                    masks=sorted(state.masks),
                    maps=list(MAP_NAMES),
                    optimized=True,
                    optimized_maps=[n for n in ("albedo", "roughness",
                                                "metallic")
                                    if getattr(b, f"{n}_o") is not None],
                    prior_maps=list(b.prior_maps),
                    preview_png_b64=state.preview_png_b64())

    @app.get("/v1/maps/{name}")
    def maps(name: str, hdr: int = 0):
        b = state.bundle
        if name not in MAP_NAMES:
            raise HTTPException(status_code=404,
                                detail=f"unknown map {name!r}")
        if name == "envmap":
            require_optimized()
            arr = b.envmap.radiance
        elif name in ("albedo", "roughness", "metallic"):
            arr = b.material(name).data
        else:
            arr = getattr(b, f"{name}_p").data if name != "input" \
                else b.input.data
        if hdr:
            return Response(storage.pfm_bytes(arr),
                            media_type="application/octet-stream")
        a = np.asarray(arr, dtype=np.float64)
        if name == "normal":
            a = 0.5 * (a + 1.0)
        elif name == "depth":
            a = a / 20.0
        gamma = name in ("input", "albedo", "envmap")
        return Response(storage.png_preview_bytes(a, gamma_encode=gamma),
                        media_type="image/png")

    @app.post("/v1/edits", status_code=202)
    def edits(payload: dict = Body(...)):
        require_optimized()
        kind = payload.get("kind")
        if kind not in EDIT_KINDS:
            raise bad_request("kind", f"must be one of {EDIT_KINDS}")
        quality = payload.get("quality", "preview")
        if quality not in ("preview", "final"):
            raise bad_request("quality", "must be 'preview' or 'final'")
        spp = payload.get("spp",
                          state.preview_spp if quality == "preview"
                          else state.final_spp)
        if not isinstance(spp, int) or isinstance(spp, bool) \
                or not 1 <= spp <= 4096:
            raise bad_request("spp", "must be an integer in [1, 4096]")
        seed = payload.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise bad_request("seed", "must be an integer")
        st = RenderSettings(spp=spp, seed=seed)
        runner = _build_runner(state, kind, payload, st)
        job = state.submit("edit", runner)
        return JSONResponse(status_code=202,
                            content=dict(id=job.id, status=job.status))

    def _job(job_id):
        with state.lock:
            job = state.jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404,
                                    detail=f"unknown job {job_id!r}")
            return job

    @app.get("/v1/jobs/{job_id}")
    def job_status(job_id: str):
        job = _job(job_id)
        with state.lock:
            return job.summary()

    @app.get("/v1/jobs/{job_id}/result")
    def job_result(job_id: str, hdr: int = 0):
        job = _job(job_id)
        with state.lock:
            status, result = job.status, job.result
        if status != "done" or result is None:
            raise HTTPException(status_code=404,
                                detail=f"job {job_id} has no result "
                                       f"(status {status})")
        if hdr:
            return Response(storage.pfm_bytes(result.data),
                            media_type="application/octet-stream")
        return Response(storage.png_preview_bytes(result.f64()),
                        media_type="image/png")

    return app
