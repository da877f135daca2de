"""Per-candidate lambda computation, normal gate, quantization and the 1D accumulator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyAccumulator, IllConditioned
from .fitting import DEFAULT_RANK_TOL, NullSpaceSolution
from .geometry import Quadric, gradient


@dataclass(frozen=True)
class VoteParams:
    tau_n: float = 0.95
    lambda_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.tau_n <= 1:
            raise ValueError("tau_n must lie in (0, 1]")
        if self.lambda_scale <= 0:
            raise ValueError("lambda_scale must be positive")


def lambda_terms(ns: NullSpaceSolution, X, N, weight=None):
    """Numerator and denominator of the closed-form lambda for each candidate.

    ``lambda = num / den`` with ``num = (A1 mu)^T (n1 - A1 p)`` and
    ``den = ||A1 mu||^2``, where ``A1``/``n1`` are the candidate's constraint
    rows.  Summing both over several candidates gives the stacked
    least-squares solution.
    """
    if weight is not None and weight != ns.weight:
        ns = NullSpaceSolution(ns.particular, ns.basis, ns.dim, weight,
                               ns.common_scale, ns.rhs_scale)
    R, r = ns.candidate_rows(X, N)
    a = R @ ns.mu
    resid = r - R @ ns.particular
    return np.einsum("kr,kr->k", a, resid), np.einsum("kr,kr->k", a, a)


def lambda_for_point(ns: NullSpaceSolution, x4, n4, weight=None,
                     rank_tol=DEFAULT_RANK_TOL) -> float:
    """Family coordinate of the member that best explains one more oriented point.

    Raises
    ------
    IllConditioned
        If the candidate's rows are (nearly) blind to the family direction.
    """
    num, den = lambda_terms(ns, np.reshape(x4, (1, 3)), np.reshape(n4, (1, 3)), weight)
    if math.sqrt(den[0]) < rank_tol:
        raise IllConditioned("candidate does not constrain the solution family")
    return float(num[0] / den[0])


def normal_gate(ns: NullSpaceSolution, lam, x4, n4, tau_n) -> bool:
    """Whether the family member at ``lam`` has gradient agreeing with ``n4``."""
    g = gradient(ns.member(lam), np.asarray(x4, dtype=float))
    gn = np.linalg.norm(g)
    if gn < 1e-12:
        return False
    return bool(np.dot(g, n4) / gn > tau_n)


def theta_of_lambda(lam, lambda_scale=1.0):
    return np.arctan(np.asarray(lam, dtype=float) / lambda_scale)


def lambda_of_theta(theta, lambda_scale=1.0):
    return lambda_scale * np.tan(theta)


def quantize_lambda(lam, params: VoteParams, bin_count: int):
    """Bin index of ``atan(lam / lambda_scale)`` on a uniform grid over (-pi/2, pi/2)."""
    if bin_count < 8:
        raise ValueError("bin_count must be at least 8")
    theta = theta_of_lambda(lam, params.lambda_scale)
    b = np.floor((theta + np.pi / 2) / np.pi * bin_count).astype(np.int64)
    b = np.clip(b, 0, bin_count - 1)
    return int(b) if b.ndim == 0 else b


def gaussian_kernel(bandwidth):
    radius = max(1, int(math.ceil(4 * bandwidth)))
    offsets = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (offsets / bandwidth) ** 2)
    return k / k.sum()


class Accumulator:
    """Histogram over the bounded angle ``theta = atan(lambda / c)``.

    Smoothing uses a normalized discrete Gaussian; bins near the two ends of
    the open interval simply lose the kernel mass that falls outside.
    """

    def __init__(self, bin_count=64, kernel_bandwidth=1.5):
        if bin_count < 8:
            raise ValueError("bin_count must be at least 8")
        self.bin_count = int(bin_count)
        self.kernel_bandwidth = float(kernel_bandwidth)
        self._kernel = gaussian_kernel(self.kernel_bandwidth)
        self.bins = np.zeros(self.bin_count, dtype=np.int64)
        self.votes_cast = 0

    def reset(self):
        self.bins[:] = 0
        self.votes_cast = 0

    def add(self, bin_indices):
        idx = np.asarray(bin_indices, dtype=np.int64).ravel()
        if idx.size:
            self.bins += np.bincount(idx, minlength=self.bin_count)
            self.votes_cast += idx.size

    @property
    def bin_width(self) -> float:
        return math.pi / self.bin_count

    @property
    def theta_centers(self) -> np.ndarray:
        return -math.pi / 2 + (np.arange(self.bin_count) + 0.5) * self.bin_width

    @property
    def central_weight(self) -> float:
        return float(self._kernel[len(self._kernel) // 2])

    def smoothed(self) -> np.ndarray:
        return np.convolve(self.bins.astype(float), self._kernel, mode="same")

    def peak(self):
        """``(theta, mass, bin)`` at the smoothed maximum, sub-bin refined."""
        if self.votes_cast == 0:
            raise EmptyAccumulator("no votes were cast")
        s = self.smoothed()
        k = int(np.argmax(s))
        offset = 0.0
        if 0 < k < self.bin_count - 1:
            denom = s[k - 1] - 2 * s[k] + s[k + 1]
            if denom < 0:
                offset = float(np.clip(0.5 * (s[k - 1] - s[k + 1]) / denom, -0.5, 0.5))
        theta = -math.pi / 2 + (k + 0.5 + offset) * self.bin_width
        return theta, float(s[k]), k

    def copy(self) -> "Accumulator":
        out = Accumulator(self.bin_count, self.kernel_bandwidth)
        out.bins = self.bins.copy()
        out.votes_cast = self.votes_cast
        return out

    def rows(self):
        s = self.smoothed()
        return [(i, float(t), int(c), float(m))
                for i, (t, c, m) in enumerate(zip(self.theta_centers, self.bins, s))]

    def to_csv(self, path_or_file):
        """Write ``bin_index, theta_center, raw_count, smoothed_mass`` rows."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(["bin_index", "theta_center", "raw_count", "smoothed_mass"])
            for i, t, c, m in self.rows():
                w.writerow([i, repr(t), c, repr(m)])
        finally:
            if own:
                fh.close()


def vote_and_peak(acc: Accumulator, lambdas, params: VoteParams):
    """Cast one vote per lambda and return ``(peak_theta, peak_mass)``."""
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    lambdas = lambdas[np.isfinite(lambdas)]
    acc.add(quantize_lambda(lambdas, params, acc.bin_count))
    theta, mass, _ = acc.peak()
    return theta, mass


def lambda_to_quadric(ns: NullSpaceSolution, theta, lambda_scale=1.0) -> Quadric:
    """Canonical family member at accumulator angle ``theta``."""
    if not abs(theta) < math.pi / 2:
        raise ValueError("theta must lie in the open interval (-pi/2, pi/2)")
    return Quadric(ns.member(float(lambda_of_theta(theta, lambda_scale))))


def refine_lambda(num, den, bins, peak_bin, window=2):
    """Stacked least-squares lambda over the voters within ``window`` bins of the peak.

    ``num``/``den`` are the per-candidate terms from :func:`lambda_terms` (or
    the kernel); returns ``None`` if no voter falls inside the window.
    """
    sel = (bins >= 0) & (np.abs(bins - peak_bin) <= window)
    d = den[sel].sum()
    if not d > 0:
        return None
    return float(num[sel].sum() / d)


def vote_batch(ns: NullSpaceSolution, X, N, params: VoteParams, bin_count,
               cond_tol=DEFAULT_RANK_TOL, backend=None):
    """Vectorized lambda + gate + quantization over candidate points.

    Returns ``(num, den, bins, status)`` from the selected kernel backend.
    """
    impl = kernels if backend is None else kernels.backends()[backend]
    return impl.vote_candidates(ns.particular, ns.mu, X, N, ns.weight, ns.rhs_scale,
                                ns.common_scale, params.tau_n, params.lambda_scale,
                                bin_count, cond_tol)
