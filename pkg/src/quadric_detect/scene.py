"""Scene containers shared by detection, clustering and the synthetic benchmarks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import TooFewPoints
from .geometry import OrientedPoint, Quadric, as_coeffs, canonicalize

_BALL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SceneCloud:
    """Oriented points in unit-ball coordinates plus the raw-frame transform.

    ``raw = center + scale * points``.  ``normals`` may be ``None`` until
    :func:`estimate_normals` has run.
    """

    points: np.ndarray
    normals: Optional[np.ndarray]
    center: np.ndarray
    scale: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", X)
        if self.normals is not None:
            N = np.ascontiguousarray(self.normals, dtype=float).reshape(-1, 3)
            if N.shape != X.shape:
                raise ValueError("points and normals differ in shape")
            object.__setattr__(self, "normals", N)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if len(X) and np.max(np.einsum("ij,ij->i", X, X)) > (1 + _BALL_TOL) ** 2:
            raise ValueError("normalized points must lie in the unit ball")

    def __len__(self):
        return len(self.points)

    @property
    def diameter(self) -> float:
        """Scene diameter in raw units (the normalized cloud fits a ball of diameter 2)."""
        return 2.0 * self.scale

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def transform(self) -> np.ndarray:
        """4x4 map from raw homogeneous coordinates to normalized ones."""
        T = np.eye(4)
        T[:3, :3] /= self.scale
        T[:3, 3] = -self.center / self.scale
        return T

    def oriented_points(self):
        if self.normals is None:
            raise ValueError("cloud has no normals")
        return [OrientedPoint(x, n) for x, n in zip(self.points, self.normals)]

    def raw_points(self) -> np.ndarray:
        return self.center + self.scale * self.points

    def to_raw(self, Q) -> Quadric:
        """Express a normalized-frame quadric in raw scene coordinates."""
        T = self.transform
        return Quadric.from_matrix(T.T @ Quadric(as_coeffs(Q)).matrix @ T)

    def to_normalized(self, Q) -> Quadric:
        Ti = np.linalg.inv(self.transform)
        return Quadric.from_matrix(Ti.T @ Quadric(as_coeffs(Q)).matrix @ Ti)

    def with_points(self, points, normals) -> "SceneCloud":
        return SceneCloud(points, normals, self.center, self.scale)

    def subsample_indices(self, k: int) -> np.ndarray:
        """Deterministic sorted subset of ``min(k, len)`` indices (cached)."""
        k = min(int(k), len(self))
        if k not in self._cache:
            if k == len(self):
                idx = np.arange(k)
            else:
                idx = np.sort(np.random.default_rng(0).choice(len(self), k, replace=False))
            self._cache[k] = idx
        return self._cache[k]


def normalize_scene(points, normals=None) -> SceneCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    ``points`` may also be a sequence of :class:`OrientedPoint`.
    """
    if len(points) and isinstance(points[0], OrientedPoint):
        normals = np.array([p.n for p in points])
        points = np.array([p.x for p in points])
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(X)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain NaN or Inf")
    center = X.mean(axis=0)
    r = np.sqrt(np.max(np.einsum("ij,ij->i", X - center, X - center)))
    scale = float(r) if r > 0 else 1.0
    Y = (X - center) / scale
    # guard against the farthest point landing a rounding step outside the ball
    norms = np.linalg.norm(Y, axis=1)
    Y[norms > 1] /= norms[norms > 1, None]
    if normals is not None:
        normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    return SceneCloud(Y, normals, center, scale)


@dataclass(frozen=True)
class Basis:
    """Sorted index triple (or single index for type-specific modes)."""

    indices: tuple
    hash_key: int

    @classmethod
    def from_indices(cls, indices, n_points: int) -> "Basis":
        idx = tuple(sorted(int(i) for i in indices))
        if len(set(idx)) != len(idx):
            raise ValueError("basis indices must be distinct")
        key = 0
        for i in idx:
            key = key * n_points + i
        return cls(idx, key)


@dataclass(frozen=True)
class Hypothesis:
    quadric: Quadric
    score: float
    inlier_count: int
    basis: Optional[Basis] = None
    peak_mass: float = 0.0

    @property
    def q(self) -> np.ndarray:
        return canonicalize(self.quadric.q)
