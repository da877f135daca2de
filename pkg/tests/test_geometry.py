import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import poly_value
from quadric_detect.geometry import (OrientedPoint, Plane, Quadric, QuadricClass,
                                     algebraic_distance, canonicalize, classify,
                                     coeffs_to_matrix, foot_points, gradient,
                                     matrix_to_coeffs, plane_quadric, project_to_surface,
                                     quadric_distance_samples, sphere_parameters,
                                     sphere_quadric)
from quadric_detect.synth import random_quadric, sample_surface

SPHERE = [1, 1, 1, 0, 0, 0, 0, 0, 0, -1]

coeffs = arrays(np.float64, 10, elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda q: np.linalg.norm(q) > 1e-3)
points3 = arrays(np.float64, 3, elements=st.floats(-2, 2, allow_nan=False))


def test_algebraic_distance_unit_sphere():
    Q = Quadric(SPHERE)
    assert algebraic_distance(Q, [0, 0, 0]) == pytest.approx(-1 / np.linalg.norm(SPHERE))
    assert algebraic_distance(Q, [1, 0, 0]) == pytest.approx(0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(coeffs, points3)
def test_algebraic_distance_matches_polynomial(q, x):
    Q = Quadric(q)
    assert algebraic_distance(Q, x) == pytest.approx(poly_value(Q.q, x), abs=1e-12)


def test_matrix_view_is_symmetric_and_roundtrips():
    q = np.arange(1, 11, dtype=float)
    M = coeffs_to_matrix(q)
    assert np.array_equal(M, M.T)
    assert np.array_equal(matrix_to_coeffs(M), q)
    x = np.array([0.3, -0.2, 0.7])
    xh = np.append(x, 1)
    assert xh @ M @ xh == pytest.approx(poly_value(q, x))


def test_gradient_examples():
    assert np.allclose(gradient(np.array(SPHERE, float), [1, 0, 0]), [2, 0, 0])
    cone = np.array([1, 1, -1, 0, 0, 0, 0, 0, 0, 0], float)
    assert np.array_equal(gradient(cone, [0, 0, 0]), [0, 0, 0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-4
    for _ in range(1000):
        q = canonicalize(rng.normal(size=10))
        x = rng.uniform(-1, 1, 3)
        fd = np.array([(algebraic_distance(q, x + h * e) - algebraic_distance(q, x - h * e))
                       / (2 * h) for e in np.eye(3)])
        g = gradient(q, x)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-3)


@settings(max_examples=200, deadline=None)
@given(coeffs)
def test_canonicalize_idempotent_bitwise(q):
    c = canonicalize(q)
    assert np.array_equal(canonicalize(c), c)
    assert np.linalg.norm(c) == pytest.approx(1.0)
    first = c[np.flatnonzero(np.abs(c) > 1e-12)[0]]
    assert first > 0


@settings(max_examples=100, deadline=None)
@given(coeffs, st.floats(-100, 100).filter(lambda s: abs(s) > 1e-3), points3)
def test_scale_invariance(q, s, x):
    a, b = Quadric(q), Quadric(s * q)
    assert np.allclose(a.q, b.q, atol=1e-12)
    assert classify(a) == classify(b)
    ga, gb = gradient(q, x), s * gradient(q, x)
    if np.linalg.norm(ga) > 1e-9:
        assert abs(abs(ga @ gb) / (np.linalg.norm(ga) * np.linalg.norm(gb)) - 1) < 1e-9


def test_zero_quadric_rejected():
    with pytest.raises(ValueError):
        Quadric(np.zeros(10))
    with pytest.raises(ValueError):
        quadric_distance_samples(np.zeros(10), [[0, 0, 0]])


def test_quadric_is_immutable_and_comparable():
    Q = Quadric(SPHERE)
    with pytest.raises(ValueError):
        Q.q[0] = 2.0
    assert Q == Quadric(-2 * np.array(SPHERE, float))
    assert hash(Q) == hash(Quadric(SPHERE))


def test_oriented_point_and_plane_validation():
    with pytest.raises(ValueError):
        OrientedPoint([0, 0, 0], [0, 0, 2])
    with pytest.raises(ValueError):
        Plane([0, 0, 2, 0])
    p = Plane.from_point_normal([0, 0, 5], [0, 0, 3])
    assert np.allclose(p.pi, [0, 0, 1, -5])
    assert p.distance([1, 1, 6]) == pytest.approx(1)


def test_plane_quadric_examples():
    assert np.allclose(plane_quadric([0, 0, 1, 0]).q, [0, 0, 1, 0, 0, 0, 0, 0, 0, 0])
    expect = canonicalize([1, 0, 0, 0, 0, 0, -1, 0, 0, 1])
    assert np.allclose(plane_quadric(Plane([1, 0, 0, -1])).q, expect)


def test_plane_quadric_rank_one():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = rng.normal(size=3)
        pi = np.append(n / np.linalg.norm(n), rng.normal())
        s = np.linalg.svd(plane_quadric(pi).matrix, compute_uv=False)
        assert s[1] < 1e-10 * s[0]
        assert classify(plane_quadric(pi)) is QuadricClass.PLANE


@pytest.mark.parametrize("q, cls", [
    (SPHERE, QuadricClass.SPHERE),
    ([1, 2, 3, 0, 0, 0, 0, 0, 0, -1], QuadricClass.ELLIPSOID),
    ([1, 1, 0, 0, 0, 0, 0, 0, 0, -1], QuadricClass.ELLIPTIC_CYLINDER),
    ([1, -1, 0, 0, 0, 0, 0, 0, 0, -1], QuadricClass.HYPERBOLIC_CYLINDER),
    ([1, 0, 0, 0, 0, 0, 0, -0.5, 0, 0], QuadricClass.PARABOLIC_CYLINDER),
    ([1, 1, -1, 0, 0, 0, 0, 0, 0, -1], QuadricClass.HYPERBOLOID_ONE_SHEET),
    ([-1, -1, 1, 0, 0, 0, 0, 0, 0, -1], QuadricClass.HYPERBOLOID_TWO_SHEETS),
    ([1, 1, -1, 0, 0, 0, 0, 0, 0, 0], QuadricClass.CONE),
    ([1, 1, 0, 0, 0, 0, 0, 0, -0.5, 0], QuadricClass.ELLIPTIC_PARABOLOID),
    ([1, -1, 0, 0, 0, 0, 0, 0, -0.5, 0], QuadricClass.HYPERBOLIC_PARABOLOID),
    ([1, -1, 0, 0, 0, 0, 0, 0, 0, 0], QuadricClass.PLANE_PAIR),
    ([1, 1, 1, 0, 0, 0, 0, 0, 0, 1], QuadricClass.OTHER),  # imaginary sphere
])
def test_classify_canonical_forms(q, cls):
    assert classify(Quadric(q)) is cls
    assert classify(Quadric(-3.0 * np.array(q, float))) is cls


def test_classify_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        classify(Quadric(SPHERE), 0.0)


def test_sphere_helpers_roundtrip():
    Q = sphere_quadric([0.1, -0.2, 0.3], 0.4)
    c, r = sphere_parameters(Q)
    assert np.allclose(c, [0.1, -0.2, 0.3]) and r == pytest.approx(0.4)


def test_distance_samples_radial():
    rng = np.random.default_rng(2)
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    assert quadric_distance_samples(Quadric(SPHERE), 1.1 * d) == pytest.approx(0.1, abs=1e-6)
    assert quadric_distance_samples(Quadric(SPHERE), d) == pytest.approx(0, abs=1e-9)


def test_distance_samples_zero_on_surface():
    for seed in range(5):
        Q = random_quadric(seed)
        X, _ = sample_surface(Q, 50, seed)
        assert quadric_distance_samples(Q, X) < 1e-9


def _ellipsoid_mesh_distance(axes, X, n=600):
    # brute force: nearest vertex of a dense parametric tessellation
    u = np.linspace(0, np.pi, n)
    v = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    P = np.stack([axes[0] * np.sin(uu) * np.cos(vv), axes[1] * np.sin(uu) * np.sin(vv),
                  axes[2] * np.cos(uu)], -1).reshape(-1, 3)
    from scipy.spatial import cKDTree
    return cKDTree(P).query(X)[0]


def test_distance_samples_matches_tessellation():
    rng = np.random.default_rng(3)
    axes = np.array([0.8, 0.5, 0.3])
    Q = Quadric([axes[0] ** -2, axes[1] ** -2, axes[2] ** -2, 0, 0, 0, 0, 0, 0, -1])
    X = rng.uniform(-1, 1, (200, 3))
    ours = quadric_distance_samples(Q, X)
    mesh = _ellipsoid_mesh_distance(axes, X).mean()
    assert abs(ours - mesh) <= 0.02 * mesh


def test_foot_points_are_on_surface_and_orthogonal():
    Q = Quadric([1, 4, 9, 0, 0, 0, 0, 0, 0, -1])
    rng = np.random.default_rng(4)
    X = rng.uniform(-0.8, 0.8, (100, 3))
    Y, ok = foot_points(Q, X)
    assert ok.all()
    assert np.all(np.abs(algebraic_distance(Q, Y)) < 1e-10)
    g = gradient(Q, Y)
    d = X - Y
    cross = np.linalg.norm(np.cross(g, d), axis=1)
    assert np.all(cross <= 1e-6 * np.linalg.norm(g, axis=1) * np.maximum(
        np.linalg.norm(d, axis=1), 1e-12) + 1e-9)


def test_project_to_surface_reports_convergence():
    x, done = project_to_surface(Quadric(SPHERE), [[2.0, 0, 0], [0, 0, 0]])
    assert done[0] and np.allclose(x[0], [1, 0, 0])
    assert not done[1]  # the centre has zero gradient
