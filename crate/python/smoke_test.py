"""Smoke test for the Python bindings.

Build first:  cargo build --release -p mcsr-py --features extension-module
then run:     python3 python/smoke_test.py
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_mcsr():
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libmcsr.so")
        if os.path.exists(lib):
            dest = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(dest, "mcsr.so"))
            sys.path.insert(0, dest)
            break
    import mcsr

    return mcsr


def main():
    mcsr = import_mcsr()

    cfg = json.loads(mcsr.default_config())
    assert cfg["match"]["patch_w"] == 13 and cfg["stg"]["num_rstb"] == 4

    n = 32
    hr = mcsr.ImagePlane(
        n, n, [0.5 + 0.2 * math.cos(2 * math.pi * (y + x) / n) for y in range(n) for x in range(n)]
    )
    lr = mcsr.degrade(hr, 4)
    assert (lr.height, lr.width) == (8, 8)
    back = mcsr.zero_fill_upsample(lr, 4)
    assert max(abs(a - b) for a, b in zip(back.data, hr.data)) < 1e-5

    mask = mcsr.central_mask(n, n, 2)
    assert sum(mask) == n * n // 4

    assert mcsr.psnr(hr, hr) == 100.0
    assert abs(mcsr.ssim(hr, hr) - 1.0) < 1e-9
    shifted = mcsr.ImagePlane(n, n, [v + 0.1 for v in hr.data])
    assert abs(mcsr.psnr(shifted, hr) - 20.0) < 1e-5
    l_rec, l_dc, l_full = mcsr.losses(shifted, hr, 4)
    assert abs(l_rec - 0.1) < 1e-9 and l_dc < 1e-12
    grad = mcsr.loss_gradient(shifted, hr, 4)
    assert (grad.height, grad.width) == (n, n)

    small = dict(cfg, uf=2, channels=8)
    small["stg"] = dict(cfg["stg"], num_rstb=1, stl_per_rstb=2, embed_dim=8, num_heads=2, window=4)
    model = mcsr.Model(json.dumps(small), seed=7)
    target = mcsr.degrade(hr, 2)
    sr = model.forward(target, hr)
    assert (sr.height, sr.width) == (n, n)
    assert all(math.isfinite(v) for v in sr.data)
    lines = model.match_debug(target, hr).splitlines()
    assert lines and len(lines[0].split()) == 6

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "img.mcimg")
        mcsr.write_image(path, lr)
        again = mcsr.read_image(path)
        assert (again.height, again.width) == (8, 8)

    ok, report = mcsr.selftest()
    assert ok, report
    print("python smoke test passed")


if __name__ == "__main__":
    main()
