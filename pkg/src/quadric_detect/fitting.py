"""Constraint systems and closed-form quadric fits from oriented points.

Each oriented point ``(x, n)`` contributes one point row ``v(x)`` and three
gradient rows ``grad v(x)``.  Two right-hand-side conventions are provided:

* *compact* (common scale): ``A q = n`` with the raw normals on the right.
  All rank decisions use this form.  It is exact only when the gradient norm
  is the same at every point (spheres, planes).
* *scale-free*: the per-point gradient scale is eliminated by projecting the
  gradient rows onto the tangent plane of each normal, ``(I - n n^T) grad v q = 0``.
  This is the least-squares elimination of the per-point scales and is exact
  on noise-free data for every quadric type.  Generic fits use it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasis, RankDeficient
from .geometry import (Plane, Quadric, canonicalize, gradient, matrix_to_coeffs,
                       monomial_gradients, monomials, stack_points)

DEFAULT_RANK_TOL = 1e-8
_NORMAL_TOL = 1e-6

# (A, G, H, I, J) -> full coefficient vector with A = B = C and D = E = F = 0
SPHERE_EMBEDDING = np.zeros((10, 5))
SPHERE_EMBEDDING[0:3, 0] = 1.0
SPHERE_EMBEDDING[6, 1] = SPHERE_EMBEDDING[7, 2] = SPHERE_EMBEDDING[8, 3] = 1.0
SPHERE_EMBEDDING[9, 4] = 1.0


@dataclass(frozen=True)
class ConstraintSystem:
    rows: np.ndarray
    rhs: np.ndarray
    weight: float

    @property
    def n_points(self) -> int:
        return self.rows.shape[0] // 4


@dataclass(frozen=True)
class FitDiagnostics:
    rank: int
    singular_values: np.ndarray
    condition: float


@dataclass(frozen=True)
class NullSpaceSolution:
    """Solution family ``particular + basis @ lambda`` of an under-determined fit.

    ``common_scale`` selects how candidate points are turned into constraint
    rows (see :meth:`candidate_rows`); ``rhs_scale`` is the scale of the
    normal entries that matches ``particular``.
    """

    particular: np.ndarray
    basis: np.ndarray
    dim: int
    weight: float = 1.0
    common_scale: bool = False
    rhs_scale: float = 1.0
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def mu(self) -> np.ndarray:
        return self.basis[:, 0]

    def member(self, lam) -> np.ndarray:
        """Raw (un-canonicalized) coefficients of ``p + lam * mu``."""
        return self.particular + lam * self.mu

    def candidate_rows(self, X, N):
        """Constraint rows ``(k, 4, 10)`` and right-hand sides ``(k, 4)`` of candidates."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N = np.atleast_2d(np.asarray(N, dtype=float))
        w = self.weight
        V = monomials(X)[:, None, :]
        Gr = monomial_gradients(X)
        rhs = np.zeros((len(X), 4))
        if self.common_scale:
            rhs[:, 1:] = w * self.rhs_scale * N
        else:
            Gr = Gr - N[:, :, None] * np.einsum("ki,kij->kj", N, Gr)[:, None, :]
        return np.concatenate([V, w * Gr], axis=1), rhs


def _oriented_arrays(points, normals):
    if normals is None:
        X, N = stack_points(points)
    else:
        X = np.asarray(points, dtype=float).reshape(-1, 3)
        N = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(X) == 0:
        raise ValueError("at least one oriented point is required")
    if len(X) != len(N):
        raise ValueError("points and normals differ in length")
    if np.any(np.abs(np.linalg.norm(N, axis=1) - 1.0) > _NORMAL_TOL):
        raise ValueError("normals must have unit length")
    return X, N


def _interleave(point_rows, grad_rows):
    k, width = point_rows.shape
    out = np.empty((k, 4, width))
    out[:, 0, :] = point_rows
    out[:, 1:, :] = grad_rows
    return out.reshape(4 * k, width)


def build_system(points, normals=None, weight=1.0) -> ConstraintSystem:
    """Compact ``4N x 10`` system: per point one point row then three gradient rows.

    ``points`` is either a sequence of :class:`OrientedPoint` or an ``(N, 3)``
    array accompanied by ``normals``.  Gradient rows and their normal entries
    are multiplied by ``weight``.
    """
    X, N = _oriented_arrays(points, normals)
    rows = _interleave(monomials(X), weight * monomial_gradients(X))
    rhs = _interleave(np.zeros((len(X), 1)), weight * N[:, :, None]).ravel()
    return ConstraintSystem(rows, rhs, float(weight))


def build_scale_free_system(points, normals=None, weight=1.0) -> ConstraintSystem:
    """``4N x 10`` homogeneous system with per-point gradient scales eliminated."""
    X, N = _oriented_arrays(points, normals)
    G = monomial_gradients(X)
    G = G - N[:, :, None] * np.einsum("ki,kij->kj", N, G)[:, None, :]
    rows = _interleave(monomials(X), weight * G)
    return ConstraintSystem(rows, np.zeros(len(rows)), float(weight))


def build_full_system(points, normals=None):
    """Homogeneous ``4N x (10 + N)`` system in ``(q, alpha)`` with one scale per point."""
    X, N = _oriented_arrays(points, normals)
    k = len(X)
    A = np.zeros((4 * k, 10 + k))
    A[:, :10] = _interleave(monomials(X), monomial_gradients(X))
    for i in range(k):
        A[4 * i + 1:4 * i + 4, 10 + i] = -N[i]
    return A


def numerical_rank(M, rank_tol=DEFAULT_RANK_TOL):
    """Rank relative to the largest singular value, plus the singular values."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > rank_tol * s[0])), s


def _diagnostics(system, rank_tol):
    rank, s = numerical_rank(system.rows, rank_tol)
    sv = np.zeros(10)
    sv[:len(s)] = s[:10]
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return FitDiagnostics(rank, sv, cond)


def _orient(q, X, N):
    g = gradient(q, X)
    return -q if np.sum(g * N) < 0 else q


def fit_least_squares(points, normals=None, weight=1.0, *, common_scale=False,
                      rank_tol=DEFAULT_RANK_TOL):
    """Least-squares quadric through four or more oriented points.

    By default the scale-free system is solved as a homogeneous problem
    (smallest right singular vector), which reproduces noise-free surfaces
    exactly.  ``common_scale=True`` solves the compact ``A q = n`` system
    instead.

    Returns
    -------
    (Quadric, FitDiagnostics)

    Raises
    ------
    RankDeficient
        If the compact system has rank below 10.
    """
    X, N = _oriented_arrays(points, normals)
    if len(X) < 4:
        raise ValueError("least-squares fit needs at least 4 oriented points")
    compact = build_system(X, N, weight)
    diag = _diagnostics(compact, rank_tol)
    if diag.rank < 10:
        raise RankDeficient(diag.rank, 10)
    if common_scale:
        q = np.linalg.lstsq(compact.rows, compact.rhs, rcond=None)[0]
    else:
        M = build_scale_free_system(X, N, weight).rows
        q = np.linalg.svd(M, full_matrices=False)[2][-1]
    return Quadric(q), diag


def fit_minimal_4pt(points, normals=None, weight=1.0, *, rank_tol=DEFAULT_RANK_TOL):
    """Closed-form fit from exactly four oriented points."""
    X, N = _oriented_arrays(points, normals)
    if len(X) != 4:
        raise ValueError("minimal fit takes exactly 4 oriented points")
    return fit_least_squares(X, N, weight, rank_tol=rank_tol)


def data_plane(X) -> Plane:
    """Plane through the first three points of ``X``."""
    X = np.asarray(X, dtype=float)
    n = np.cross(X[1] - X[0], X[2] - X[0])
    norm = np.linalg.norm(n)
    if norm == 0:
        raise DegenerateBasis("points are collinear")
    return Plane.from_point_normal(X[0], n / norm)


def _orthogonal_complement(u):
    """Columns spanning the complement of unit ``u`` (Householder reflection)."""
    v = -u.copy() if u[0] > 0 else u.copy()
    v[0] -= 1.0
    H = np.eye(len(u)) - (2.0 / (v @ v)) * np.outer(v, v)
    return H[:, 1:]


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _family_3pt(X, N, weight, rank_tol, check_rank):
    """Unvalidated core of :func:`nullspace_3pt` (also used by the detection loop)."""
    V = monomials(X)
    G = monomial_gradients(X)
    compact = _interleave(V, weight * G)
    rank = 9
    if check_rank:
        rank, _ = numerical_rank(compact, rank_tol)
        if rank != 9:
            raise DegenerateBasis(f"basis system has rank {rank}, expected 9")
    n = _cross(X[1] - X[0], X[2] - X[0])
    nn = np.sqrt(n @ n)
    if nn == 0:
        raise DegenerateBasis("points are collinear")
    n /= nn
    pi = np.append(n, -(n @ X[0]))
    mu = matrix_to_coeffs(np.outer(pi, pi))
    mu /= np.sqrt(mu @ mu)
    U = _orthogonal_complement(mu)
    G = G - N[:, :, None] * np.einsum("ki,kij->kj", N, G)[:, None, :]
    M = _interleave(V, weight * G)
    _, s, Vt = np.linalg.svd(M @ U)
    if s[-2] > rank_tol * s[0]:
        p = _orient(U @ Vt[-1], X, N)
        return NullSpaceSolution(p, mu[:, None], 10 - rank, float(weight), singular_values=s)
    # Normals all equal to the data-plane normal: every z * (linear) fits up to
    # scale, but with one common scale the family is still a line.
    rhs = _interleave(np.zeros((3, 1)), weight * N[:, :, None]).ravel()
    p = np.linalg.lstsq(compact, rhs, rcond=None)[0]
    p -= (p @ mu) * mu
    scale = np.sqrt(p @ p)
    if scale == 0:
        raise DegenerateBasis("solution family has more than one dimension")
    return NullSpaceSolution(p / scale, mu[:, None], 10 - rank, float(weight),
                             common_scale=True, rhs_scale=1.0 / scale, singular_values=s)


def nullspace_3pt(points, normals=None, weight=1.0, *, rank_tol=DEFAULT_RANK_TOL,
                  check_rank=True) -> NullSpaceSolution:
    """One-parameter solution family of three oriented points.

    The family direction is the rank-1 quadric of the plane through the three
    points (the trivial solution, whose value and gradient vanish there).  The
    particular solution is the unit quadric orthogonal to it that best
    satisfies the scale-free constraints, oriented so that its gradients
    agree with the input normals.

    Raises
    ------
    DegenerateBasis
        If the compact system does not have rank 9 (collinear or coincident
        points) or the family is not one-dimensional.
    """
    X, N = _oriented_arrays(points, normals)
    if len(X) != 3:
        raise ValueError("nullspace_3pt takes exactly 3 oriented points")
    return _family_3pt(X, N, weight, rank_tol, check_rank)


def build_system_sphere(point, normal=None, weight=1.0) -> ConstraintSystem:
    """``4 x 5`` compact system in the sphere unknowns ``(A, G, H, I, J)``."""
    if normal is None:
        X, N = stack_points([point])
    else:
        X, N = _oriented_arrays(point, normal)
    full = build_system(X, N, weight)
    return ConstraintSystem(full.rows @ SPHERE_EMBEDDING, full.rhs, full.weight)


def nullspace_sphere(point, normal=None, weight=1.0, *,
                     rank_tol=DEFAULT_RANK_TOL) -> NullSpaceSolution:
    """Family of spheres through one oriented point, embedded in coefficient space.

    The particular solution is rescaled to unit norm (with ``rhs_scale``
    tracking the matching normal scale) and made orthogonal to the family
    direction, which is the zero-radius sphere at the point.
    """
    sys_ = build_system_sphere(point, normal, weight)
    rank, s = numerical_rank(sys_.rows, rank_tol)
    if rank != 4:
        raise DegenerateBasis(f"sphere system has rank {rank}, expected 4")
    p = SPHERE_EMBEDDING @ np.linalg.lstsq(sys_.rows, sys_.rhs, rcond=None)[0]
    mu = SPHERE_EMBEDDING @ np.linalg.svd(sys_.rows)[2][-1]
    mu /= np.linalg.norm(mu)
    p = p - (p @ mu) * mu
    scale = np.linalg.norm(p)
    return NullSpaceSolution(p / scale, mu[:, None], 1, float(weight),
                             common_scale=True, rhs_scale=1.0 / scale,
                             singular_values=s)


def fit_plane_1pt(point, normal=None) -> Plane:
    """Plane through a single oriented point."""
    if normal is None:
        return Plane.from_point_normal(point.x, point.n)
    return Plane.from_point_normal(point, normal)


def family_residual(ns: NullSpaceSolution, q) -> float:
    """Distance of unit ``q`` from the linear span of ``particular`` and the basis."""
    B = np.column_stack([ns.particular, ns.basis])
    Qm, _ = np.linalg.qr(B)
    q = canonicalize(q)
    return float(np.linalg.norm(q - Qm @ (Qm.T @ q)))
