import os
import subprocess
import sys

import numpy as np
import pytest

from quadric_detect import kernels
from quadric_detect.fitting import nullspace_3pt
from quadric_detect.geometry import principal_form
from quadric_detect.synth import random_quadric, sample_surface

BACKENDS = kernels.backends()
compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")


def _case(seed):
    Q = random_quadric(seed)
    X, N = sample_surface(Q, 203, seed)
    rng = np.random.default_rng(seed)
    C = rng.uniform(-1, 1, (100, 3))
    Nc = rng.normal(size=(100, 3))
    Nc /= np.linalg.norm(Nc, axis=1, keepdims=True)
    return Q, nullspace_3pt(X[:3], N[:3]), np.vstack([X[3:], C]), np.vstack([N[3:], Nc])


@compiled
def test_vote_candidates_parity():
    py, c = BACKENDS["python"], BACKENDS["compiled"]
    for seed in range(20):
        _, ns, X, N = _case(seed)
        args = (ns.particular, ns.mu, X, N, ns.weight, ns.rhs_scale, ns.common_scale,
                0.95, 1.0, 64, 1e-8)
        a, b = py.vote_candidates(*args), c.vote_candidates(*args)
        assert np.array_equal(a[3], b[3])
        assert np.array_equal(a[2], b[2])
        assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-14)
        assert np.allclose(a[1], b[1], rtol=1e-12, atol=1e-14)


@compiled
def test_inlier_mask_parity():
    py, c = BACKENDS["python"], BACKENDS["compiled"]
    for seed in range(20):
        Q, _, X, N = _case(seed)
        assert np.array_equal(py.inlier_mask(Q.q, X, N, 0.01, 0.95),
                              c.inlier_mask(Q.q, X, N, 0.01, 0.95))


@compiled
def test_foot_points_parity():
    py, c = BACKENDS["python"], BACKENDS["compiled"]
    rng = np.random.default_rng(0)
    for seed in range(10):
        qd, R = principal_form(random_quadric(seed))
        X = rng.uniform(-1, 1, (300, 3)) @ R
        ya, oka = py.foot_points(qd, X, 1e-10, 50)
        yb, okb = c.foot_points(qd, X, 1e-10, 50)
        assert np.array_equal(oka, okb)
        assert np.allclose(ya, yb, atol=1e-10)


def test_pure_python_switch():
    env = dict(os.environ, QUADRIC_DETECT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from quadric_detect import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
