"""Compare the compiled kernels with the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats N]

Prints per-call timings for each hot loop and the end-to-end ``detect``
time with each backend (the fallback run is forced through the
``QUADRIC_DETECT_PURE_PYTHON`` environment variable in a subprocess).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from quadric_detect import kernels
from quadric_detect.fitting import nullspace_3pt
from quadric_detect.geometry import canonicalize, principal_form
from quadric_detect.synth import corrupt, make_scene, random_quadric

_DETECT = """
import time
from quadric_detect import kernels
from quadric_detect.detection import DetectionConfig, detect
from quadric_detect.synth import corrupt, make_scene, random_quadric
scene = corrupt(make_scene(random_quadric(101), 1000, 1), 0.0, 0.5, 1)
cloud = scene.cloud
t = time.perf_counter()
detect(cloud, DetectionConfig(), 1)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def _best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; only the fallback is available")
    Q = random_quadric(7)
    scene = corrupt(make_scene(Q, 2000, 0), 0.01, 0.5, 0)
    X, N = scene.points, scene.normals
    q = canonicalize(Q.q)
    qd, R = principal_form(Q)
    ns = nullspace_3pt(X[:3], N[:3])
    cases = {
        "vote_candidates (4000 pts)": lambda k: k.vote_candidates(
            ns.particular, ns.mu, X, N, 1.0, 1.0, False, 0.95, 1.0, 64, 1e-8),
        "inlier_mask (4000 pts)": lambda k: k.inlier_mask(q, X, N, 0.01, 0.95),
        "foot_points (500 pts)": lambda k: k.foot_points(qd, X[:500] @ R, 1e-10, 50),
    }
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {name: _best(lambda: fn(impl), args.repeats) for name, impl in impls.items()}
        row = f"{label:<28}" + "".join(f"{1e6 * t:>12.1f}us" for t in times.values())
        if len(times) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)

    print("\nend-to-end detect (2000 bases x 150 samples):")
    for force in ("", "1"):
        env = dict(os.environ)
        env.pop("QUADRIC_DETECT_PURE_PYTHON", None)
        if force:
            env["QUADRIC_DETECT_PURE_PYTHON"] = force
        out = subprocess.run([sys.executable, "-c", _DETECT], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<10} {float(out[1]):.3f} s")


if __name__ == "__main__":
    np.seterr(all="ignore")
    main()
