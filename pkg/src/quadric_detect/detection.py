"""Preprocessing, basis sampling and the RANSAC-with-local-voting detectors."""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .clustering import ClusterParams, aggregate, score
from .errors import DegenerateBasis, Exhausted, RankDeficient
from .fitting import _cross, _family_3pt, fit_minimal_4pt, nullspace_sphere
from .geometry import Plane, Quadric
from .scene import Basis, Hypothesis, SceneCloud, normalize_scene
from .voting import Accumulator, VoteParams, refine_lambda, vote_batch

MODES = ("generic", "sphere", "plane")
_MIN_AREA = 1e-6
_BASIS_RETRIES = 100
_PLANE_TRIALS = 100


@dataclass(frozen=True)
class DetectionConfig:
    mode: str = "generic"
    tau_s: float = 0.025
    knn: int = 10
    neighbor_radius_factor: float = 1.0
    expected_diameter: float = 0.5
    max_bases: int = 2000
    samples_per_basis: int = 150
    tau: float = 0.01
    tau_n: float = 0.95
    weight: float = 1.0
    bin_count: int = 64
    kernel_bandwidth: float = 1.5
    lambda_scale: float = 1.0
    refine: bool = True
    min_peak_votes: int = 5
    min_peak_fraction: float = 0.02
    plane_removal: bool = True
    plane_min_fraction: float = 0.15
    max_planes: int = 10
    viewpoint: Optional[tuple] = None
    rank_tol: float = 1e-8
    tau_coeff: float = 0.5
    tau_frob: float = 0.3
    tau_geom: float = 0.4
    k_sub: int = 2000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.tau_s < 1:
            raise ValueError("tau_s must lie in [0, 1)")
        if self.knn < 3:
            raise ValueError("knn must be at least 3")
        if self.max_bases < 0 or self.samples_per_basis < 1:
            raise ValueError("budgets must be positive")
        if not (self.tau > 0 and 0 < self.tau_n <= 1 and self.weight > 0):
            raise ValueError("tau, tau_n and weight must be positive (tau_n <= 1)")
        if self.bin_count < 8 or self.kernel_bandwidth <= 0 or self.lambda_scale <= 0:
            raise ValueError("invalid voting parameters")
        if self.viewpoint is not None:
            object.__setattr__(self, "viewpoint", tuple(float(v) for v in self.viewpoint))

    @property
    def vote_params(self) -> VoteParams:
        return VoteParams(self.tau_n, self.lambda_scale)

    @property
    def cluster_params(self) -> ClusterParams:
        return ClusterParams(self.tau_coeff, self.tau_frob, self.tau_geom, self.tau,
                             self.tau_n, self.k_sub)

    @property
    def neighbor_radius(self) -> float:
        return self.neighbor_radius_factor * self.expected_diameter

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["viewpoint"] = None if self.viewpoint is None else list(self.viewpoint)
        return d


# -- preprocessing ------------------------------------------------------------

def voxel_downsample(cloud: SceneCloud, tau_s: float) -> SceneCloud:
    """One centroid per occupied grid cell of side ``tau_s * 2`` (normalized units)."""
    if not 0 < tau_s < 1:
        raise ValueError("tau_s must lie in (0, 1)")
    if len(cloud) == 0:
        return cloud
    cell = 2.0 * tau_s
    keys = np.floor((cloud.points + 1.0) / cell).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    m = len(first)
    counts = np.bincount(inv, minlength=m).astype(float)
    X = np.stack([np.bincount(inv, cloud.points[:, k], m) for k in range(3)], axis=1)
    X /= counts[:, None]
    N = None
    if cloud.normals is not None:
        N = np.stack([np.bincount(inv, cloud.normals[:, k], m) for k in range(3)], axis=1)
        norms = np.linalg.norm(N, axis=1)
        bad = norms < 1e-9
        N[bad] = cloud.normals[first[bad]]
        norms[bad] = 1.0
        N /= norms[:, None]
    return cloud.with_points(X, N)


def estimate_normals(cloud: SceneCloud, knn: int, viewpoint=None) -> SceneCloud:
    """PCA normals over ``knn`` neighbours, oriented toward ``viewpoint``.

    ``viewpoint`` is in raw scene coordinates; ``None`` means a viewer at
    infinity along +z.
    """
    n = len(cloud)
    if knn < 3 or knn >= n:
        raise ValueError("knn must satisfy 3 <= knn < point count")
    X = cloud.points
    _, idx = cKDTree(X).query(X, k=knn + 1)
    nb = X[idx] - X[idx].mean(axis=1, keepdims=True)
    C = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(C)
    N = vecs[:, :, 0]
    if viewpoint is None:
        towards = np.broadcast_to([0.0, 0.0, 1.0], X.shape)
    else:
        v = (np.asarray(viewpoint, dtype=float) - cloud.center) / cloud.scale
        towards = v - X
    flip = np.einsum("ij,ij->i", N, towards) < 0
    N[flip] *= -1
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    return cloud.with_points(X, N)


def _plane_support(X, N, cand_x, cand_n, tau, tau_n):
    dist = X @ cand_n.T - np.einsum("ij,ij->i", cand_x, cand_n)
    agree = np.abs(N @ cand_n.T)
    return (np.abs(dist) < tau) & (agree > tau_n)


def _refit_plane(X, mask, n0):
    P = X[mask]
    c = P.mean(axis=0)
    _, vecs = np.linalg.eigh((P - c).T @ (P - c))
    n = vecs[:, 0]
    if n @ n0 < 0:
        n = -n
    return c, n


def find_planes(cloud: SceneCloud, cfg: DetectionConfig, seed=0):
    """Greedy single-point plane RANSAC; returns ``(planes, inlier masks, kept mask)``."""
    if cloud.normals is None:
        raise ValueError("plane search needs normals")
    rng = np.random.default_rng(seed)
    X, N = cloud.points, cloud.normals
    keep = np.ones(len(X), dtype=bool)
    min_count = cfg.plane_min_fraction * len(X)
    planes, masks = [], []
    while len(planes) < cfg.max_planes:
        rem = np.flatnonzero(keep)
        if len(rem) < 3:
            break
        cand = rng.choice(rem, min(_PLANE_TRIALS, len(rem)), replace=False)
        support = _plane_support(X[rem], N[rem], X[cand], N[cand], cfg.tau, cfg.tau_n)
        counts = support.sum(axis=0)
        best = int(np.argmax(counts))
        if counts[best] < max(min_count, 3):
            break
        mask = support[:, best]
        c, n = _refit_plane(X[rem], mask, N[cand[best]])
        refit = _plane_support(X[rem], N[rem], c[None], n[None], cfg.tau, cfg.tau_n)[:, 0]
        if refit.sum() >= mask.sum():
            mask = refit
        else:
            c, n = X[cand[best]], N[cand[best]]
        full = np.zeros(len(X), dtype=bool)
        full[rem[mask]] = True
        planes.append(Plane.from_point_normal(c, n))
        masks.append(full)
        keep &= ~full
    return planes, masks, keep


def remove_planes(cloud: SceneCloud, cfg: DetectionConfig, seed=0):
    """Strip dominant planes; returns the reduced cloud and the planes (normalized frame)."""
    planes, _, keep = find_planes(cloud, cfg, seed)
    return cloud.with_points(cloud.points[keep], cloud.normals[keep]), planes


def plane_to_raw(cloud: SceneCloud, plane: Plane) -> Plane:
    pi = cloud.transform.T @ plane.pi
    return Plane(pi / np.linalg.norm(pi[:3]))


def linear_plane_quadric(plane: Plane) -> Quadric:
    """Degree-one quadric ``2 (G x + H y + I z) + J`` of a plane (nonzero gradient)."""
    a, b, c, d = plane.pi
    return Quadric([0, 0, 0, 0, 0, 0, a / 2, b / 2, c / 2, d])


# -- bases --------------------------------------------------------------------

class _Sampler:
    """Basis draws sharing one spatial index and one set of seen hash keys."""

    def __init__(self, cloud: SceneCloud, cfg: DetectionConfig):
        self.cloud = cloud
        self.cfg = cfg
        self._tree = None
        self.seen = set()

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.cloud.points)
        return self._tree

    def neighbours(self, i):
        return self.tree.query_ball_point(self.cloud.points[i], self.cfg.neighbor_radius)

    def local_tuple(self, rng, size):
        """``size`` distinct indices: a uniform anchor plus companions in its ball."""
        n = len(self.cloud)
        i = int(rng.integers(n))
        nb = [j for j in self.neighbours(i) if j != i]
        if len(nb) < size - 1:
            return None
        rest = rng.choice(len(nb), size - 1, replace=False)
        return [i] + [nb[k] for k in rest]

    def draw(self, rng):
        """Fresh rank-9 triple and its solution family."""
        X, N = self.cloud.points, self.cloud.normals
        n = len(X)
        for _ in range(_BASIS_RETRIES):
            idx = self.local_tuple(rng, 3)
            if idx is None:
                continue
            basis = Basis.from_indices(idx, n)
            if basis.hash_key in self.seen:
                continue
            sel = list(basis.indices)
            P = X[sel]
            if 0.5 * np.linalg.norm(_cross(P[1] - P[0], P[2] - P[0])) < _MIN_AREA:
                continue
            try:
                ns = _family_3pt(P, N[sel], self.cfg.weight, self.cfg.rank_tol, True)
            except DegenerateBasis:
                continue
            self.seen.add(basis.hash_key)
            return basis, ns
        raise Exhausted("no fresh valid basis within the retry budget")


def sample_basis(cloud: SceneCloud, rng, cfg: DetectionConfig, seen: set,
                 sampler: Optional[_Sampler] = None) -> Basis:
    """Draw an unseen, non-collinear, rank-9 index triple and record it in ``seen``."""
    if len(cloud) < 3:
        raise Exhausted("fewer than 3 points")
    s = sampler or _Sampler(cloud, cfg)
    s.seen = seen
    return s.draw(rng)[0]


def _rng(seed, i):
    return np.random.default_rng([int(seed), int(i)])


def _candidates(rng, n, count, exclude):
    idx = rng.integers(0, n, count)
    keep = np.ones(len(idx), dtype=bool)
    for e in exclude:
        keep &= idx != e
    return idx[keep]


def _check_cloud(cloud):
    if cloud.normals is None:
        raise ValueError("detection needs normals; run estimate_normals first")


class Trace:
    """Optional per-basis diagnostics collected during detection."""

    def __init__(self, keep_lambdas=False):
        self.accumulators = {}
        self.keep_lambdas = keep_lambdas
        self.lambdas = []

    def record(self, i, basis, acc, num, den, bins):
        self.accumulators[basis.hash_key] = acc.copy()
        if self.keep_lambdas:
            voted = bins >= 0
            self.lambdas.append((i, num[voted] / den[voted], bins[voted]))


def _vote_loop(cloud, cfg, seed, draw, stop, trace):
    X, N = cloud.points, cloud.normals
    n = len(X)
    params = cfg.vote_params
    cparams = cfg.cluster_params
    acc = Accumulator(cfg.bin_count, cfg.kernel_bandwidth)
    out = []
    for i in range(cfg.max_bases):
        rng = _rng(seed, i)
        try:
            basis, ns = draw(rng)
        except Exhausted:
            break
        cand = _candidates(rng, n, cfg.samples_per_basis, basis.indices)
        num, den, bins, _ = vote_batch(ns, X[cand], N[cand], params, cfg.bin_count,
                                       cfg.rank_tol)
        acc.reset()
        acc.add(bins[bins >= 0])
        if trace is not None:
            trace.record(i, basis, acc, num, den, bins)
        if acc.votes_cast == 0:
            continue
        theta, mass, k = acc.peak()
        if mass < max(cfg.min_peak_votes, cfg.min_peak_fraction * acc.votes_cast):
            continue
        lam = refine_lambda(num, den, bins, k) if cfg.refine else None
        if lam is None:
            lam = cfg.lambda_scale * math.tan(theta)
        q = ns.member(lam)
        if not np.all(np.isfinite(q)) or not np.any(q):
            continue
        Q = Quadric(q)
        s, c = score(Q, cloud, cparams)
        if c < cfg.min_peak_votes or s <= 0:
            continue
        out.append(Hypothesis(Q, s, c, basis, mass))
        if stop is not None and stop(out):
            break
    return out


def detect(cloud: SceneCloud, cfg: DetectionConfig = DetectionConfig(), seed=0, *,
           stop: Optional[Callable] = None, trace: Optional[Trace] = None):
    """Generic quadric hypotheses from 3-point bases and 1D local voting.

    Basis ``i`` draws from its own stream seeded by ``(seed, i)``, so the
    first ``k`` bases are the same for any budget ``>= k``.  ``stop`` is
    called with the hypothesis list after each emission and ends the loop
    when it returns true.
    """
    _check_cloud(cloud)
    if len(cloud) < 4:
        return []
    sampler = _Sampler(cloud, cfg)
    return _vote_loop(cloud, cfg, seed, sampler.draw, stop, trace)


def detect_spheres(cloud: SceneCloud, cfg: DetectionConfig = DetectionConfig(), seed=0, *,
                   stop: Optional[Callable] = None, trace: Optional[Trace] = None):
    """Sphere-only detection: one-point bases voting over the family of tangent spheres."""
    _check_cloud(cloud)
    n = len(cloud)
    if n < 2:
        return []
    X, N = cloud.points, cloud.normals
    seen = set()

    def draw(rng):
        for _ in range(_BASIS_RETRIES):
            i = int(rng.integers(n))
            if i in seen:
                continue
            seen.add(i)
            try:
                return Basis((i,), i), nullspace_sphere(X[i], N[i], cfg.weight,
                                                         rank_tol=cfg.rank_tol)
            except DegenerateBasis:
                continue
        raise Exhausted("every point has been used as a basis")

    return _vote_loop(cloud, cfg, seed, draw, stop, trace)


def detect_planes(cloud: SceneCloud, cfg: DetectionConfig = DetectionConfig(), seed=0):
    """Plane hypotheses from one-point plane fits, as degree-one quadrics."""
    _check_cloud(cloud)
    planes, masks, _ = find_planes(cloud, cfg, seed)
    out = []
    for plane, mask in zip(planes, masks):
        Q = linear_plane_quadric(plane)
        s, c = score(Q, cloud, cfg.cluster_params)
        out.append(Hypothesis(Q, s, c, None, float(mask.sum())))
    return out


def detect_ransac4(cloud: SceneCloud, cfg: DetectionConfig = DetectionConfig(), seed=0, *,
                   stop: Optional[Callable] = None, local: bool = False):
    """Reference hypothesize-and-verify loop on 4-tuples.

    Each trial fits the minimal four-point quadric and verifies it against
    the whole scene; the trial budget is ``max_bases``.  Tuples are drawn
    uniformly from the scene, or with ``local=True`` from the same anchor
    neighbourhood the 3-point sampler uses.
    """
    _check_cloud(cloud)
    X, N = cloud.points, cloud.normals
    n = len(X)
    if n < 4:
        return []
    sampler = _Sampler(cloud, cfg)
    cparams = cfg.cluster_params
    out = []
    for i in range(cfg.max_bases):
        rng = _rng(seed, i)
        idx = None
        for _ in range(_BASIS_RETRIES):
            if local:
                idx = sampler.local_tuple(rng, 4)
            else:
                idx = [int(j) for j in rng.choice(n, 4, replace=False)]
            if idx is None:
                continue
            key = Basis.from_indices(idx, n)
            if key.hash_key in sampler.seen:
                idx = None
                continue
            sampler.seen.add(key.hash_key)
            break
        if idx is None:
            break
        try:
            Q, _ = fit_minimal_4pt(X[idx], N[idx], cfg.weight, rank_tol=cfg.rank_tol)
        except RankDeficient:
            continue
        s, c = score(Q, cloud, cparams)
        if c < cfg.min_peak_votes:
            continue
        out.append(Hypothesis(Q, s, c, key, float(c)))
        if stop is not None and stop(out):
            break
    return out


# -- pipeline -----------------------------------------------------------------

@dataclass
class PipelineResult:
    cloud: SceneCloud
    planes: list
    hypotheses: list
    clustered: list
    timings: dict

    def raw_quadrics(self):
        return [self.cloud.to_raw(h.quadric) for h in self.clustered]

    def raw_planes(self):
        return [plane_to_raw(self.cloud, p) for p in self.planes]


def preprocess(points, normals, cfg: DetectionConfig, timings=None, seed=0):
    """Normalize, downsample, estimate missing normals and strip dominant planes."""
    timings = {} if timings is None else timings
    t = time.perf_counter()
    cloud = normalize_scene(points, normals)
    if cfg.tau_s > 0:
        cloud = voxel_downsample(cloud, cfg.tau_s)
    timings["downsample"] = time.perf_counter() - t
    t = time.perf_counter()
    if cloud.normals is None:
        if len(cloud) <= cfg.knn:
            raise ValueError("too few points to estimate normals")
        cloud = estimate_normals(cloud, cfg.knn, cfg.viewpoint)
    timings["normals"] = time.perf_counter() - t
    planes = []
    t = time.perf_counter()
    if cfg.plane_removal and cfg.mode != "plane":
        cloud, planes = remove_planes(cloud, cfg, seed)
    timings["plane_removal"] = time.perf_counter() - t
    return cloud, planes, timings


def run_pipeline(points, normals=None, cfg: DetectionConfig = DetectionConfig(), seed=0,
                 trace: Optional[Trace] = None) -> PipelineResult:
    """Full detection on raw points: preprocessing, voting, clustering."""
    cloud, planes, timings = preprocess(points, normals, cfg, seed=seed)
    t = time.perf_counter()
    if cfg.mode == "generic":
        hyps = detect(cloud, cfg, seed, trace=trace)
    elif cfg.mode == "sphere":
        hyps = detect_spheres(cloud, cfg, seed, trace=trace)
    else:
        hyps = detect_planes(cloud, cfg, seed)
    timings["detect"] = time.perf_counter() - t
    t = time.perf_counter()
    clustered = aggregate(hyps, cloud, cfg.cluster_params)
    timings["cluster"] = time.perf_counter() - t
    return PipelineResult(cloud, planes, hyps, clustered, timings)
