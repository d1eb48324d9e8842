"""Small numerical kernel: least squares, normal quantiles, moments and seeded streams.

Dense matrices are plain two-dimensional ``float64`` numpy arrays; :func:`as_matrix`
is the single place where their invariants (2-D, finite) are enforced.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.special import erfc

from .exceptions import InvalidArgumentError

RANK_RTOL = 1e-10

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_TWO_POW_M53 = 2.0 ** -53

# Acklam's rational approximation, refined below by one Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def as_matrix(values, name: str = "design") -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array or raise."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def as_vector(values, name: str = "vector") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


class LeastSquaresResult(NamedTuple):
    coefficients: np.ndarray
    rank: int


def least_squares(design, response) -> LeastSquaresResult:
    """Minimum residual-sum-of-squares solution via column-pivoted QR.

    Columns whose pivot ``|R_jj|`` falls below ``RANK_RTOL * |R_00|`` are treated
    as linearly dependent and receive a coefficient of exactly zero.

    Parameters
    ----------
    design : array_like, shape (n, p)
    response : array_like, shape (n,)

    Returns
    -------
    LeastSquaresResult
        ``coefficients`` of length ``p`` and the number of retained columns.
    """
    X = as_matrix(design)
    y = as_vector(response, "response")
    n, p = X.shape
    if p < 1 or n != y.shape[0] or n < p:
        raise InvalidArgumentError(
            f"least_squares needs rows = len(response) >= cols >= 1; got design {X.shape}, "
            f"response {y.shape}"
        )
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    coef = np.zeros(p)
    if diag[0] == 0.0:
        return LeastSquaresResult(coef, 0)
    rank = int(np.count_nonzero(diag > RANK_RTOL * diag[0]))
    qty = Q[:, :rank].T @ y
    coef[piv[:rank]] = scipy.linalg.solve_triangular(R[:rank, :rank], qty)
    return LeastSquaresResult(coef, rank)


def normal_cdf(x):
    """Standard normal CDF."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)


def _lower_tail_quantile(p: np.ndarray) -> np.ndarray:
    # p in (0, 0.5]; result <= 0
    x = np.empty_like(p)
    low = p < _P_LOW
    if np.any(low):
        q = np.sqrt(-2.0 * np.log(p[low]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[low] = num / den
    mid = ~low
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    # Halley refinement against the lower tail keeps full relative precision there.
    e = 0.5 * erfc(-x / _SQRT2) - p
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(p):
    """Inverse of the standard normal CDF.

    Accurate to well below 1e-9 absolute on (0, 1). Exactly antisymmetric:
    ``normal_quantile(1 - p) == -normal_quantile(p)`` whenever ``1 - p`` is exact.

    Raises
    ------
    InvalidArgumentError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise InvalidArgumentError("normal_quantile requires 0 < p < 1")
    flat = np.atleast_1d(arr).ravel()
    upper = flat > 0.5
    tail = np.where(upper, 1.0 - flat, flat)
    x = _lower_tail_quantile(tail)
    x = np.where(upper, -x, x)
    x[flat == 0.5] = 0.0
    if arr.ndim == 0:
        return float(x[0])
    return x.reshape(arr.shape)


def sample_variance(values) -> float:
    """Unbiased sample variance, sum((v - mean)^2) / (n - 1)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise InvalidArgumentError("sample_variance needs at least two values")
    d = v - v.mean()
    return float(d @ d) / (v.size - 1)


def sample_correlation(a, b) -> float | None:
    """Pearson correlation, or ``None`` when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(da @ db) / denom


class RandomStream:
    """Deterministic, counter-based random stream.

    Each ``(seed, stream_id, path)`` triple keys an independent Philox generator,
    so the draw sequence never depends on which other streams were consumed or
    in which thread. ``substream`` derives child streams for sub-tasks (for
    example data generation vs. fold assignment within one Monte Carlo repetition).
    """

    def __init__(self, seed: int = 0, stream_id: int = 0, path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0 or seed >= 2 ** 64 or stream_id >= 2 ** 64:
            raise InvalidArgumentError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(i) for i in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        self._bitgen = np.random.Philox(ss)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def substream(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, self.path + (int(index),))

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on the open interval (0, 1) with 53-bit resolution."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        raw = self._bitgen.random_raw(count) >> np.uint64(11)
        return ((raw.astype(np.float64) + 0.5) * _TWO_POW_M53).reshape(shape)

    def normal(self, size) -> np.ndarray:
        return normal_quantile(self.uniform(size))

    def bernoulli(self, prob: float, size) -> np.ndarray:
        if not 0.0 <= prob <= 1.0:
            raise InvalidArgumentError("bernoulli probability must lie in [0, 1]")
        return (self.uniform(size) < prob).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        if n < 0:
            raise InvalidArgumentError("permutation length must be non-negative")
        return np.argsort(self.uniform(n), kind="stable")


def random_draws(stream: RandomStream, kind: str, count: int, *, p: float | None = None):
    """Draw ``count`` values of the given kind from ``stream``.

    ``kind`` is one of ``"uniform01"``, ``"standard-normal"``, ``"bernoulli"``
    (requires ``p``) or ``"permutation"`` (returns a permutation of ``range(count)``).
    """
    if count < 0:
        raise InvalidArgumentError("count must be non-negative")
    if kind == "uniform01":
        return stream.uniform(count)
    if kind == "standard-normal":
        return stream.normal(count)
    if kind == "bernoulli":
        if p is None:
            raise InvalidArgumentError("bernoulli draws need p")
        return stream.bernoulli(p, count)
    if kind == "permutation":
        return stream.permutation(count)
    raise InvalidArgumentError(f"unknown draw kind {kind!r}")
