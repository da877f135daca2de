"""Quadric representations, evaluation, gradients and coarse classification.

A quadric is stored as its 10 coefficients ``q = (A, B, C, D, E, F, G, H, I, J)``
of

    A x^2 + B y^2 + C z^2 + 2D xy + 2E xz + 2F yz + 2G x + 2H y + 2I z + J = 0

or equivalently as the symmetric 4x4 matrix ``Q`` with ``[x 1] Q [x 1]^T = 0``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Coefficients below this (on a unit-norm vector) are treated as zero when
# choosing the canonical sign.
SIGN_TOL = 1e-12
DEFAULT_EIG_TOL = 1e-6

_MATRIX_INDEX = np.array([
    [0, 3, 4, 6],
    [3, 1, 5, 7],
    [4, 5, 2, 8],
    [6, 7, 8, 9],
])


def monomials(x):
    """Monomial vector ``v(x) = (x², y², z², 2xy, 2xz, 2yz, 2x, 2y, 2z, 1)``.

    Works on a single point or on an ``(..., 3)`` array.
    """
    x = np.asarray(x, dtype=float)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    one = np.ones_like(X)
    return np.stack([X * X, Y * Y, Z * Z, 2 * X * Y, 2 * X * Z, 2 * Y * Z,
                     2 * X, 2 * Y, 2 * Z, one], axis=-1)


def monomial_gradients(x):
    """Jacobian of :func:`monomials`, shape ``(..., 3, 10)``."""
    x = np.asarray(x, dtype=float)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    out = np.zeros(x.shape[:-1] + (3, 10))
    out[..., 0, 0] = 2 * X
    out[..., 0, 3] = 2 * Y
    out[..., 0, 4] = 2 * Z
    out[..., 0, 6] = 2
    out[..., 1, 1] = 2 * Y
    out[..., 1, 3] = 2 * X
    out[..., 1, 5] = 2 * Z
    out[..., 1, 7] = 2
    out[..., 2, 2] = 2 * Z
    out[..., 2, 4] = 2 * X
    out[..., 2, 5] = 2 * Y
    out[..., 2, 8] = 2
    return out


def coeffs_to_matrix(q):
    q = np.asarray(q, dtype=float)
    return q[..., _MATRIX_INDEX]


def matrix_to_coeffs(Q):
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return np.stack([Q[..., 0, 0], Q[..., 1, 1], Q[..., 2, 2], Q[..., 0, 1],
                     Q[..., 0, 2], Q[..., 1, 2], Q[..., 0, 3], Q[..., 1, 3],
                     Q[..., 2, 3], Q[..., 3, 3]], axis=-1)


def canonicalize(q):
    """Scale ``q`` to unit norm with its first nonzero coefficient positive.

    Idempotent bit-for-bit: an already canonical vector is returned unchanged.
    """
    q = np.array(q, dtype=float).reshape(10)
    if not np.all(np.isfinite(q)):
        raise ValueError("quadric coefficients must be finite")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("the zero vector is not a quadric")
    if abs(norm - 1.0) > 4 * np.finfo(float).eps:
        q = q / norm
    nonzero = np.flatnonzero(np.abs(q) > SIGN_TOL)
    if nonzero.size and q[nonzero[0]] < 0:
        q = -q
    return q


class Quadric:
    """Immutable quadric surface in canonical normalization."""

    __slots__ = ("_q",)

    def __init__(self, coeffs):
        if isinstance(coeffs, Quadric):
            q = coeffs._q
        else:
            q = canonicalize(coeffs)
        q.flags.writeable = False
        self._q = q

    @classmethod
    def from_matrix(cls, Q):
        return cls(matrix_to_coeffs(Q))

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def matrix(self) -> np.ndarray:
        return coeffs_to_matrix(self._q)

    @property
    def gradient_matrix(self) -> np.ndarray:
        """The 3x4 operator ``2 * Q[:3, :]`` mapping ``[x 1]`` to the gradient."""
        return 2.0 * self.matrix[:3, :]

    def __call__(self, x):
        return algebraic_distance(self, x)

    def gradient(self, x):
        return gradient(self, x)

    def transformed(self, T) -> "Quadric":
        """Quadric in the frame where old homogeneous coords are ``T @ new``."""
        T = np.asarray(T, dtype=float)
        return Quadric.from_matrix(T.T @ self.matrix @ T)

    def isclose(self, other, atol=1e-9) -> bool:
        o = as_coeffs(other)
        return min(np.linalg.norm(self._q - o), np.linalg.norm(self._q + o)) <= atol

    def __eq__(self, other):
        if not isinstance(other, Quadric):
            return NotImplemented
        return bool(np.array_equal(self._q, other._q))

    def __hash__(self):
        return hash(self._q.tobytes())

    def __repr__(self):
        body = ", ".join(f"{c:.6g}" for c in self._q)
        return f"Quadric([{body}])"


def as_coeffs(Q) -> np.ndarray:
    """Coefficient vector of a :class:`Quadric` or a raw array (not rescaled)."""
    if isinstance(Q, Quadric):
        return Q.q
    q = np.asarray(Q, dtype=float)
    if q.shape == (4, 4):
        return matrix_to_coeffs(q)
    return q.reshape(10)


@dataclass(frozen=True)
class OrientedPoint:
    x: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(3)
        n = np.asarray(self.n, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("normal must have unit length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "n", n)


def stack_points(points):
    """Split a sequence of :class:`OrientedPoint` into position/normal arrays."""
    X = np.array([p.x for p in points], dtype=float).reshape(-1, 3)
    N = np.array([p.n for p in points], dtype=float).reshape(-1, 3)
    return X, N


@dataclass(frozen=True)
class Plane:
    """Homogeneous plane ``pi`` with ``pi[:3]`` a unit normal."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).reshape(4)
        if abs(np.linalg.norm(pi[:3]) - 1.0) > 1e-9:
            raise ValueError("plane normal part must have unit length")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_point_normal(cls, x, n):
        n = np.asarray(n, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(np.append(n, -np.dot(n, x)))

    @property
    def normal(self):
        return self.pi[:3]

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.pi[:3] + self.pi[3]


class QuadricClass(str, enum.Enum):
    SPHERE = "sphere"
    ELLIPSOID = "ellipsoid"
    ELLIPTIC_PARABOLOID = "elliptic_paraboloid"
    HYPERBOLIC_PARABOLOID = "hyperbolic_paraboloid"
    HYPERBOLOID_ONE_SHEET = "hyperboloid_one_sheet"
    HYPERBOLOID_TWO_SHEETS = "hyperboloid_two_sheets"
    CONE = "cone"
    ELLIPTIC_CYLINDER = "elliptic_cylinder"
    PARABOLIC_CYLINDER = "parabolic_cylinder"
    HYPERBOLIC_CYLINDER = "hyperbolic_cylinder"
    PLANE_PAIR = "plane_pair"
    PLANE = "plane"
    OTHER = "other"


def algebraic_distance(Q, x):
    """``[x 1] Q [x 1]^T`` for one point or an ``(N, 3)`` array."""
    return monomials(x) @ as_coeffs(Q)


def gradient(Q, x):
    """Gradient ``2 Q[:3, :] [x 1]^T``. Zero at singular points such as a cone apex."""
    q = as_coeffs(Q)
    x = np.asarray(x, dtype=float)
    M = coeffs_to_matrix(q)
    return 2.0 * (x @ M[:3, :3].T + M[:3, 3])


def unit_gradient(Q, x, eps=1e-12):
    """Normalized gradient; rows with norm below ``eps`` come back as zeros."""
    g = gradient(Q, x)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(norm > eps, g / np.maximum(norm, eps), 0.0)


def plane_quadric(pi) -> Quadric:
    """Rank-1 quadric ``Pi Pi^T`` whose zero set is the plane (double)."""
    if isinstance(pi, Plane):
        pi = pi.pi
    pi = np.asarray(pi, dtype=float).reshape(4)
    return Quadric.from_matrix(np.outer(pi, pi))


def sphere_quadric(center, radius) -> Quadric:
    c = np.asarray(center, dtype=float)
    return Quadric(np.r_[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, -c, c @ c - radius * radius])


def sphere_parameters(Q):
    """Center and radius of a sphere-like quadric (uses A, G, H, I, J only)."""
    q = as_coeffs(Q)
    a = q[:3].mean()
    center = -q[6:9] / a
    r2 = center @ center - q[9] / a
    return center, float(np.sqrt(max(r2, 0.0)))


def cosine_similarity(q1, q2) -> float:
    """Sign-agnostic cosine between coefficient vectors."""
    a, b = as_coeffs(q1), as_coeffs(q2)
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _signature(eigs, tol):
    pos = int(np.sum(eigs > tol))
    neg = int(np.sum(eigs < -tol))
    return pos, neg


def classify(Q, eig_tol=DEFAULT_EIG_TOL) -> QuadricClass:
    """Coarse type from the eigen-sign signatures of ``Q`` and its 3x3 block.

    ``eig_tol`` is relative to the largest eigenvalue magnitude of ``Q``.
    """
    if eig_tol <= 0:
        raise ValueError("eig_tol must be positive")
    M = coeffs_to_matrix(as_coeffs(Q))
    e4 = np.linalg.eigvalsh(M)
    e3 = np.linalg.eigvalsh(M[:3, :3])
    scale = np.max(np.abs(e4))
    if scale == 0:
        return QuadricClass.OTHER
    tol = eig_tol * scale
    p4, n4 = _signature(e4, tol)
    p3, n3 = _signature(e3, tol)
    r4, r3 = p4 + n4, p3 + n3
    q_mixed = p4 > 0 and n4 > 0
    e_same = p3 == 0 or n3 == 0

    if r4 == 1:
        return QuadricClass.PLANE
    if r3 == 0:
        return QuadricClass.PLANE if (r4 == 2 and q_mixed) else QuadricClass.OTHER
    if r3 == 3:
        if e_same:
            if r4 == 4 and q_mixed:
                spread = e3.max() - e3.min()
                return QuadricClass.SPHERE if spread <= tol else QuadricClass.ELLIPSOID
            return QuadricClass.OTHER
        if r4 == 4:
            if p4 == 2:
                return QuadricClass.HYPERBOLOID_ONE_SHEET
            return QuadricClass.HYPERBOLOID_TWO_SHEETS
        return QuadricClass.CONE if r4 == 3 else QuadricClass.OTHER
    if r3 == 2:
        if e_same:
            if r4 == 4:
                return QuadricClass.ELLIPTIC_PARABOLOID
            if r4 == 3 and q_mixed:
                return QuadricClass.ELLIPTIC_CYLINDER
            return QuadricClass.OTHER
        if r4 == 4:
            return QuadricClass.HYPERBOLIC_PARABOLOID
        if r4 == 3:
            return QuadricClass.HYPERBOLIC_CYLINDER
        return QuadricClass.PLANE_PAIR if r4 == 2 else QuadricClass.OTHER
    # r3 == 1
    if r4 == 3:
        return QuadricClass.PARABOLIC_CYLINDER
    if r4 == 2 and q_mixed:
        return QuadricClass.PLANE_PAIR
    return QuadricClass.OTHER


def project_to_surface(Q, X, tol=1e-10, max_iter=50):
    """Move points along the gradient until ``|f| < tol``.

    Returns the final positions and a mask of converged points.
    """
    q = as_coeffs(Q)
    x = np.array(X, dtype=float, copy=True).reshape(-1, 3)
    done = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        f = algebraic_distance(q, x)
        done = np.abs(f) < tol
        if done.all():
            break
        g = gradient(q, x)
        gg = np.einsum("ij,ij->i", g, g)
        move = ~done & (gg > 1e-30)
        if not move.any():
            break
        x[move] -= (f[move] / gg[move])[:, None] * g[move]
    done = np.abs(algebraic_distance(q, x)) < tol
    return x, done


def principal_form(Q):
    """``(qd, R)``: coefficients without cross terms in the frame ``x' = R^T x``."""
    M = coeffs_to_matrix(canonicalize(as_coeffs(Q)))
    lam, R = np.linalg.eigh(M[:3, :3])
    qd = np.zeros(10)
    qd[0:3] = lam
    qd[6:9] = R.T @ M[:3, 3]
    qd[9] = M[3, 3]
    return qd, R


def foot_points(Q, X, tol=1e-10, max_iter=50):
    """Closest surface points ``(Y, converged)``.

    In the principal frame the closest point is a one-dimensional root
    search; the result is polished by gradient projection until ``|f| < tol``.
    """
    from . import kernels

    qd, R = principal_form(Q)
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    Y, ok = kernels.foot_points(qd, X @ R, tol, max_iter)
    return Y @ R.T, ok


def quadric_distance_samples(Q, points) -> float:
    """Mean geometric (foot-point) distance from ``points`` to the surface."""
    q = as_coeffs(Q)
    if not np.any(q):
        raise ValueError("the zero vector is not a quadric")
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) == 0:
        raise ValueError("points must be nonempty")
    y, _ = foot_points(q, X)
    return float(np.mean(np.linalg.norm(y - X, axis=1)))
