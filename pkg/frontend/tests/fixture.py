"""Synthesize the small desk bundle the e2e test serves, plus an
unoptimized copy (no envmap) for the 409 path. Prints ground-truth pixel
values as JSON so the console's HDR reader can be checked against the
engine's own data."""

import json
import os
import shutil
import sys

from materialist.scene import save_bundle
from materialist.synth import bundle_from_gbuffer, desk_scene


def main():
    out = sys.argv[1]
    out_unopt = sys.argv[2] if len(sys.argv) > 2 else None
    gbuf, merged, cam, env = desk_scene(0)
    bundle, mesh, bvh = bundle_from_gbuffer(gbuf, cam, env, spp=16, seed=5)
    save_bundle(bundle, out)
    if out_unopt:
        shutil.rmtree(out_unopt, ignore_errors=True)
        shutil.copytree(out, out_unopt)
        os.remove(os.path.join(out_unopt, "envmap.pfm"))
    alb = bundle.material("albedo").data
    h, w = alb.shape[:2]
    pts = [(5, 8), (w // 2, h // 3), (w - 7, h - 5), (12, h - 9), (w - 3, 4)]
    pixels = [dict(x=x, y=y, rgb=[float(alb[y, x, c]) for c in range(3)])
              for x, y in pts]
    print(json.dumps(dict(width=w, height=h, pixels=pixels)))


if __name__ == "__main__":
    main()
