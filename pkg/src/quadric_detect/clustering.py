"""Hypothesis scoring and coarse-to-fine agglomeration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial.distance import cdist

from . import kernels
from .geometry import as_coeffs, canonicalize, coeffs_to_matrix
from .scene import Hypothesis, SceneCloud


@dataclass(frozen=True)
class ClusterParams:
    tau_coeff: float = 0.5
    tau_frob: float = 0.3
    tau_geom: float = 0.4
    tau: float = 0.01
    tau_n: float = 0.95
    K_sub: int = 2000

    def __post_init__(self):
        for name in ("tau_coeff", "tau_frob", "tau_geom", "tau", "tau_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_geom > 1:
            raise ValueError("tau_geom must not exceed 1")
        if self.K_sub < 1:
            raise ValueError("K_sub must be at least 1")


def inliers(Q, scene: SceneCloud, tau, tau_n, indices=None) -> np.ndarray:
    q = canonicalize(as_coeffs(Q))
    X, N = scene.points, scene.normals
    if indices is not None:
        X, N = X[indices], N[indices]
    return kernels.inlier_mask(q, X, N, tau, tau_n)


def score(Q, scene: SceneCloud, params: ClusterParams = ClusterParams()):
    """``(inlier fraction, inlier count)`` of ``Q`` on the scene.

    A point counts when ``|f(x)| < tau`` for the canonical coefficients and
    the unit gradient is within ``tau_n`` of the point normal up to sign.
    """
    if len(scene) == 0:
        return 0.0, 0
    count = int(np.count_nonzero(inliers(Q, scene, params.tau, params.tau_n)))
    return count / len(scene), count


def d_close(Q1, Q2, params: ClusterParams = ClusterParams()) -> float:
    """Gated ``||Q1 Q2^+ - I||_F``; ``inf`` when the l1 coefficient gate fails.

    Both signs of ``q2`` are tried and the smaller value is returned.
    """
    q1, q2 = canonicalize(as_coeffs(Q1)), canonicalize(as_coeffs(Q2))
    M1 = coeffs_to_matrix(q1)
    P2 = np.linalg.pinv(coeffs_to_matrix(q2))
    best = np.inf
    for s in (1.0, -1.0):
        if np.abs(q1 - s * q2).sum() < params.tau_coeff:
            best = min(best, float(np.linalg.norm(s * (M1 @ P2) - np.eye(4))))
    return best


def _jaccard(a, b) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return np.nan
    return 1.0 - np.count_nonzero(a & b) / union


def d_far(Q1, Q2, scene: SceneCloud, params: ClusterParams = ClusterParams()) -> float:
    """Jaccard distance between the supports of two quadrics on a scene subsample.

    0 means identical support, 1 means no shared inlier.  When neither
    quadric has support on the subsample the distance is 0 for identical
    coefficients and 1 otherwise.
    """
    q1, q2 = canonicalize(as_coeffs(Q1)), canonicalize(as_coeffs(Q2))
    idx = scene.subsample_indices(params.K_sub)
    a = inliers(q1, scene, params.tau, params.tau_n, idx)
    b = inliers(q2, scene, params.tau, params.tau_n, idx)
    d = _jaccard(a, b)
    if np.isnan(d):
        return 0.0 if np.array_equal(q1, q2) else 1.0
    return d


def rescore(hypotheses, scene: SceneCloud, params: ClusterParams):
    out = []
    for h in hypotheses:
        s, c = score(h.quadric, scene, params)
        out.append(dataclasses.replace(h, score=s, inlier_count=c))
    return out


def _components(n, pairs):
    ds = DisjointSet(range(n))
    for i, j in pairs:
        ds.merge(int(i), int(j))
    groups = {}
    for i in range(n):
        groups.setdefault(ds[i], []).append(i)
    return list(groups.values())


def _best(members, scores):
    # highest score wins; ties go to the earliest hypothesis
    return min(members, key=lambda i: (-scores[i], i))


def _close_pairs(qs, params, chunk=4096):
    """Index pairs linked by ``d_close`` in either direction."""
    n = len(qs)
    if n < 2:
        return []
    mats = np.array([coeffs_to_matrix(q) for q in qs])
    pinvs = np.linalg.pinv(mats)
    eye = np.eye(4)
    gate_pos = cdist(qs, qs, "cityblock") < params.tau_coeff
    gate_neg = cdist(qs, -qs, "cityblock") < params.tau_coeff
    found = []
    for sign, gate in ((1.0, gate_pos), (-1.0, gate_neg)):
        i, j = np.nonzero(np.triu(gate, 1))
        for s in range(0, len(i), chunk):
            a, b = i[s:s + chunk], j[s:s + chunk]
            fwd = np.linalg.norm(sign * mats[a] @ pinvs[b] - eye, axis=(1, 2))
            bwd = np.linalg.norm(sign * mats[b] @ pinvs[a] - eye, axis=(1, 2))
            keep = np.minimum(fwd, bwd) < params.tau_frob
            found.extend(zip(a[keep], b[keep]))
    return found


def _far_pairs(qs, scene, params):
    n = len(qs)
    if n < 2:
        return []
    idx = scene.subsample_indices(params.K_sub)
    masks = np.array([inliers(q, scene, params.tau, params.tau_n, idx) for q in qs])
    m = masks.astype(np.int64)
    inter = m @ m.T
    sizes = m.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(union > 0, 1.0 - inter / np.maximum(union, 1), np.nan)
    same = (qs[:, None, :] == qs[None, :, :]).all(axis=2)
    d = np.where(np.isnan(d), np.where(same, 0.0, 1.0), d)
    i, j = np.nonzero(np.triu(d < params.tau_geom, 1))
    return list(zip(i, j))


def aggregate(hypotheses, scene: SceneCloud, params: ClusterParams = ClusterParams()):
    """Merge duplicate hypotheses; returns cluster representatives by descending score.

    Stage one links hypotheses whose ``d_close`` is below ``tau_frob``;
    stage two links the stage-one representatives whose ``d_far`` is below
    ``tau_geom``.  Links are single-linkage and each cluster is represented
    by its highest-scoring member, rescored on the full scene.
    """
    hyps = rescore(list(hypotheses), scene, params)
    if not hyps:
        return []
    qs = np.array([canonicalize(h.quadric.q) for h in hyps])
    scores = [h.score for h in hyps]

    reps = [_best(g, scores) for g in _components(len(hyps), _close_pairs(qs, params))]
    reps.sort()
    groups = _components(len(reps), _far_pairs(qs[reps], scene, params))
    final = [_best([reps[k] for k in g], scores) for g in groups]
    final.sort(key=lambda i: (-scores[i], i))
    return [hyps[i] for i in final]
