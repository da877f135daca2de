"""Synthetic quadric scenes, noise models, fit metrics and benchmark harnesses."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .errors import GenerationTimeout, RankDeficient, SurfaceNotFound
from .fitting import fit_least_squares, fit_minimal_4pt, nullspace_3pt
from .geometry import (Quadric, QuadricClass, algebraic_distance, as_coeffs, canonicalize,
                       classify, project_to_surface, quadric_distance_samples, unit_gradient)
from .scene import SceneCloud, normalize_scene

_MAX_TRIES = 1000
CLUTTER = -1


def _diag(*d):
    Q = np.zeros((4, 4))
    Q[np.arange(4), np.arange(4)] = d
    return Q


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


# Canonical 4x4 matrices per class, axis-aligned and centred; sizes keep a
# good part of each surface inside the unit ball.
def _canonical(cls, rng):
    C = QuadricClass
    if cls is C.SPHERE:
        r = _u(rng, 0.3, 0.7)
        return _diag(1, 1, 1, -r * r)
    if cls is C.ELLIPSOID:
        a, b, c = rng.uniform(0.25, 0.75, 3)
        return _diag(a ** -2, b ** -2, c ** -2, -1)
    if cls is C.HYPERBOLOID_ONE_SHEET:
        a, b = rng.uniform(0.2, 0.5, 2)
        c = _u(rng, 0.3, 0.8)
        return _diag(a ** -2, b ** -2, -c ** -2, -1)
    if cls is C.HYPERBOLOID_TWO_SHEETS:
        a, b = rng.uniform(0.3, 0.8, 2)
        c = _u(rng, 0.1, 0.35)
        return _diag(-a ** -2, -b ** -2, c ** -2, -1)
    if cls is C.CONE:
        a, b = rng.uniform(0.4, 1.2, 2)
        return _diag(a ** -2, b ** -2, -1, 0)
    if cls is C.ELLIPTIC_CYLINDER:
        a, b = rng.uniform(0.25, 0.7, 2)
        return _diag(a ** -2, b ** -2, 0, -1)
    if cls is C.HYPERBOLIC_CYLINDER:
        a, b = rng.uniform(0.15, 0.4, 2)
        return _diag(a ** -2, -b ** -2, 0, -1)
    if cls is C.ELLIPTIC_PARABOLOID:
        a, b = rng.uniform(0.4, 0.9, 2)
        Q = _diag(a ** -2, b ** -2, 0, _u(rng, -0.5, 0.0))
        Q[2, 3] = Q[3, 2] = -0.5
        return Q
    if cls is C.HYPERBOLIC_PARABOLOID:
        a, b = rng.uniform(0.4, 0.9, 2)
        Q = _diag(a ** -2, -b ** -2, 0, 0)
        Q[2, 3] = Q[3, 2] = -0.5
        return Q
    if cls is C.PARABOLIC_CYLINDER:
        a = _u(rng, 0.3, 0.8)
        Q = _diag(a ** -2, 0, 0, _u(rng, -0.4, 0.0))
        Q[2, 3] = Q[3, 2] = -0.5
        return Q
    if cls is C.PLANE_PAIR:
        n1, n2 = Rotation.random(2, random_state=rng).apply([0.0, 0.0, 1.0])
        p1, p2 = np.append(n1, _u(rng, -0.3, 0.3)), np.append(n2, _u(rng, -0.3, 0.3))
        return 0.5 * (np.outer(p1, p2) + np.outer(p2, p1))
    return None


GENERATED_CLASSES = (
    QuadricClass.SPHERE, QuadricClass.ELLIPSOID, QuadricClass.HYPERBOLOID_ONE_SHEET,
    QuadricClass.HYPERBOLOID_TWO_SHEETS, QuadricClass.CONE, QuadricClass.ELLIPTIC_CYLINDER,
    QuadricClass.HYPERBOLIC_CYLINDER, QuadricClass.ELLIPTIC_PARABOLOID,
    QuadricClass.HYPERBOLIC_PARABOLOID, QuadricClass.PARABOLIC_CYLINDER,
)


def _rigid(rng, shift):
    T = np.eye(4)
    T[:3, :3] = Rotation.random(random_state=rng).as_matrix()
    T[:3, 3] = rng.uniform(-shift, shift, 3)
    return T


def _meets_ball(q, rng, seeds=64):
    x, ok = project_to_surface(q, rng.uniform(-0.6, 0.6, (seeds, 3)))
    inside = ok & (np.linalg.norm(x, axis=1) < 0.9)
    return inside.sum() >= seeds // 4


def random_quadric(seed, cls: Optional[QuadricClass] = None) -> Quadric:
    """Random quadric of a supported class, rigidly placed so it crosses the unit ball.

    Without a filter the class is drawn uniformly from ``GENERATED_CLASSES``.
    A filter that cannot be produced falls back to random symmetric matrices
    and raises :class:`GenerationTimeout` after 1000 attempts.
    """
    rng = np.random.default_rng(seed)
    if cls is not None:
        cls = QuadricClass(cls)
    for _ in range(_MAX_TRIES):
        target = cls if cls is not None else GENERATED_CLASSES[rng.integers(len(GENERATED_CLASSES))]
        M = _canonical(target, rng)
        if M is None:
            A = rng.normal(size=(4, 4))
            M = A + A.T
        else:
            Ti = np.linalg.inv(_rigid(rng, 0.2))
            M = Ti.T @ M @ Ti
        q = canonicalize(Quadric.from_matrix(M).q)
        if classify(q) is not target:
            continue
        if _meets_ball(q, rng):
            return Quadric(q)
    raise GenerationTimeout(f"no quadric of class {cls} after {_MAX_TRIES} attempts")


def sample_surface(Q, count, seed, radius=1.0, tol=1e-12):
    """``count`` surface points inside the ball of ``radius`` and their unit normals.

    Uniform seeds in the cube around the ball are projected along the
    gradient; non-converged, outside or singular (zero-gradient) results are
    discarded.
    """
    q = canonicalize(as_coeffs(Q))
    rng = np.random.default_rng(seed)
    keep_x = []
    total, tries = 0, 0
    budget = 100 * count
    while total < count:
        if tries >= budget:
            raise SurfaceNotFound(f"only {total} of {count} projections converged")
        batch = min(max(2 * (count - total), 64), budget - tries)
        tries += batch
        x, ok = project_to_surface(q, rng.uniform(-radius, radius, (batch, 3)), tol, 100)
        g = np.linalg.norm(unit_gradient(q, x), axis=1)
        ok &= (np.linalg.norm(x, axis=1) <= radius) & (g > 0.5)
        ok &= np.abs(algebraic_distance(q, x)) < 1e-9
        keep_x.append(x[ok])
        total += int(ok.sum())
    X = np.concatenate(keep_x)[:count]
    return X, unit_gradient(q, X)


def bbox_diagonal(X) -> float:
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(X.max(axis=0) - X.min(axis=0))) if len(X) else 0.0


def random_unit_vectors(rng, k):
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def uniform_ball(rng, k, radius=1.0):
    d = random_unit_vectors(rng, k)
    return d * (radius * rng.uniform(size=(k, 1)) ** (1 / 3))


@dataclass
class SyntheticScene:
    """Points in raw coordinates with per-point surface labels (``-1`` = clutter)."""

    points: np.ndarray
    normals: np.ndarray
    ground_truth: list
    memberships: np.ndarray
    noise_sigma: float = 0.0
    clean_points: Optional[np.ndarray] = field(default=None, repr=False)

    @cached_property
    def cloud(self) -> SceneCloud:
        return normalize_scene(self.points, self.normals)

    @property
    def member_mask(self) -> np.ndarray:
        return self.memberships != CLUTTER

    def surface_points(self, k):
        sel = self.memberships == k
        return self.points[sel], self.normals[sel]


def make_scene(quadrics, count=1000, seed=0, radius=1.0) -> SyntheticScene:
    """Noise-free scene with ``count`` samples on each quadric."""
    if isinstance(quadrics, Quadric) or (
            not isinstance(quadrics, (list, tuple)) and np.ndim(quadrics) == 1):
        quadrics = [quadrics]
    ss = np.random.SeedSequence(seed)
    Xs, Ns, labels = [], [], []
    gts = []
    for k, (Q, s) in enumerate(zip(quadrics, ss.spawn(len(quadrics)))):
        Q = Quadric(as_coeffs(Q))
        X, N = sample_surface(Q, count, s, radius)
        Xs.append(X)
        Ns.append(N)
        labels.append(np.full(len(X), k))
        gts.append(Q)
    X = np.concatenate(Xs)
    return SyntheticScene(X, np.concatenate(Ns), gts, np.concatenate(labels), 0.0, X.copy())


def corrupt(scene: SyntheticScene, sigma, clutter_fraction, seed) -> SyntheticScene:
    """Gaussian displacement of members plus uniform unit-ball clutter.

    The noise standard deviation is ``sigma`` times the bounding-box diagonal
    of each surface's points.  Clutter carries random unit normals, and its
    count makes clutter ``clutter_fraction`` of the output.
    """
    if sigma < 0 or not 0 <= clutter_fraction < 1:
        raise ValueError("sigma must be >= 0 and clutter_fraction in [0, 1)")
    rng = np.random.default_rng(seed)
    X = scene.points.copy()
    if sigma > 0:
        for k in range(len(scene.ground_truth)):
            sel = scene.memberships == k
            s = sigma * bbox_diagonal(X[sel])
            X[sel] += rng.normal(scale=s, size=(int(sel.sum()), 3))
    members = int(np.count_nonzero(scene.member_mask))
    n_clutter = int(round(members * clutter_fraction / (1 - clutter_fraction)))
    C = uniform_ball(rng, n_clutter)
    Nc = random_unit_vectors(rng, n_clutter)
    clean = scene.clean_points if scene.clean_points is not None else scene.points
    return SyntheticScene(
        np.concatenate([X, C]), np.concatenate([scene.normals, Nc]), list(scene.ground_truth),
        np.concatenate([scene.memberships, np.full(n_clutter, CLUTTER)]),
        float(sigma), np.concatenate([clean, C]))


def evaluate_fit(estimated, truth, truth_points, truth_normals=None):
    """``(point_err, angle_err)`` of an estimate against ground-truth oriented samples.

    ``point_err`` is the mean foot-point distance from the samples to the
    estimated surface; ``angle_err`` is the mean ``1 - |n . unit_grad|``.
    """
    X = np.asarray(truth_points, dtype=float).reshape(-1, 3)
    if truth_normals is None:
        truth_normals = unit_gradient(truth, X)
    g = unit_gradient(estimated, X)
    angle = float(np.mean(1.0 - np.abs(np.einsum("ij,ij->i", g, truth_normals))))
    return quadric_distance_samples(estimated, X), angle


# -- fitting sweep ------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    seed: int = 1
    noise_levels: tuple = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    quadrics: int = 10
    fits: int = 20
    points: int = 100
    timings: bool = False


SWEEP_COLUMNS = ("noise_sigma", "quadric_seed", "method", "fit_index", "point_err",
                 "angle_err", "runtime_ns")
METHODS = ("minimal4", "ls")


def _fit(method, X, N, rng):
    if method == "ls":
        return fit_least_squares(X, N)[0]
    for _ in range(100):
        idx = rng.choice(len(X), 4, replace=False)
        try:
            return fit_minimal_4pt(X[idx], N[idx])[0]
        except RankDeficient:
            continue
    raise RankDeficient(0, 10, "no non-degenerate 4-subset found")


def run_fitting_sweep(cfg: SweepConfig = SweepConfig()):
    """Noise sweep comparing the minimal and all-points fits.

    Returns a list of row dicts keyed by ``SWEEP_COLUMNS``; ``runtime_ns``
    is ``None`` unless ``cfg.timings`` is set, so that the output is
    reproducible byte for byte.
    """
    rows = []
    for qi in range(cfg.quadrics):
        qseed = int(np.random.SeedSequence([cfg.seed, qi]).generate_state(1)[0])
        Q = random_quadric(qseed)
        X0, N0 = sample_surface(Q, cfg.points, qseed)
        diag = bbox_diagonal(X0)
        for li, sigma in enumerate(cfg.noise_levels):
            for fi in range(cfg.fits):
                rng = np.random.default_rng([cfg.seed, qi, li, fi])
                X = X0 + rng.normal(scale=sigma * diag, size=X0.shape)
                for method in METHODS:
                    t = time.perf_counter_ns()
                    est = _fit(method, X, N0, rng)
                    dt = time.perf_counter_ns() - t
                    pe, ae = evaluate_fit(est, Q, X0, N0)
                    rows.append(dict(noise_sigma=float(sigma), quadric_seed=qseed,
                                     method=method, fit_index=fi, point_err=pe,
                                     angle_err=ae, runtime_ns=dt if cfg.timings else None))
    rows.sort(key=lambda r: (r["noise_sigma"], r["quadric_seed"], r["method"], r["fit_index"]))
    return rows


def summarize_sweep(rows):
    """Mean/std of the errors per (noise level, method): 6 x 2 rows for the default sweep."""
    groups = {}
    for r in rows:
        groups.setdefault((r["noise_sigma"], r["method"]), []).append(r)
    out = []
    for (sigma, method), rs in sorted(groups.items()):
        pe = np.array([r["point_err"] for r in rs])
        ae = np.array([r["angle_err"] for r in rs])
        rt = [r["runtime_ns"] for r in rs if r["runtime_ns"] is not None]
        out.append(dict(noise_sigma=sigma, method=method, mean_point_err=float(pe.mean()),
                        std_point_err=float(pe.std()), mean_angle_err=float(ae.mean()),
                        std_angle_err=float(ae.std()),
                        median_runtime_ns=float(np.median(rt)) if rt else None))
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


# -- lambda benchmark ---------------------------------------------------------

def resolve_lambdas(ns, X4, N4, basis_X, basis_N):
    """Family coordinate of each candidate by re-solving its stacked 16x10 system.

    The smallest right singular vector of the full four-point system is
    projected onto the family to read off ``lambda``.
    """
    from .fitting import build_scale_free_system

    k = len(X4)
    base = build_scale_free_system(basis_X, basis_N, ns.weight).rows
    R, _ = ns.candidate_rows(X4, N4)
    A = np.concatenate([np.broadcast_to(base, (k,) + base.shape), R], axis=1)
    v = np.linalg.svd(A)[2][:, -1, :]
    return (v @ ns.mu) / (v @ ns.particular)


def _bench_case(rng):
    while True:
        Q = random_quadric(int(rng.integers(2 ** 32)))
        X, N = sample_surface(Q, 53, int(rng.integers(2 ** 32)))
        try:
            ns = nullspace_3pt(X[:3], N[:3])
        except Exception:
            continue
        return ns, X, N


def bench_lambda(trials=1000, seed=0, per_basis=50, repeats=3):
    """Per-lambda time of the batched closed form versus batched 16x10 re-solves.

    Returns ``(fast_ns, resolve_ns, max_abs_diff)`` where the times are
    medians over bases of the best-of-``repeats`` per-lambda wall time, and
    the last entry compares the two lambdas (relative to ``1 + |lambda|``).
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    n_bases = -(-trials // per_basis)
    fast, slow, worst = [], [], 0.0
    for _ in range(n_bases):
        ns, X, N = _bench_case(rng)
        X4, N4 = X[3:3 + per_basis], N[3:3 + per_basis]
        tf, ts = [], []
        for _ in range(repeats):
            t = time.perf_counter_ns()
            num, den, _, _ = kernels.vote_candidates(
                ns.particular, ns.mu, X4, N4, ns.weight, ns.rhs_scale, ns.common_scale,
                0.95, 1.0, 64, 1e-8)
            lam = num / den
            tf.append(time.perf_counter_ns() - t)
            t = time.perf_counter_ns()
            ref = resolve_lambdas(ns, X4, N4, X[:3], N[:3])
            ts.append(time.perf_counter_ns() - t)
        fast.append(min(tf) / len(X4))
        slow.append(min(ts) / len(X4))
        worst = max(worst, float(np.max(np.abs(lam - ref) / (1 + np.abs(ref)))))
    return float(np.median(fast)), float(np.median(slow)), worst
