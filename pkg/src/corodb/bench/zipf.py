"""Bounded Zipfian key generator.

Rank ``i`` (0-based) is drawn with probability proportional to
``1 / (i + 1) ** theta``. Up to ``EXACT_LIMIT`` keys the draw inverts the
exact CDF from a precomputed harmonic table; above it the generator falls
back to the closed-form approximation of Gray et al. used by YCSB.
"""

import numpy as np

from ..errors import UsageError

EXACT_LIMIT = 10_000_000
_CHUNK = 4096


def zipf_cdf(n, theta):
    weights = np.arange(1, n + 1, dtype=np.float64) ** -theta
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


class ZipfianGenerator:
    def __init__(self, n, theta, seed=0, method=None):
        if not 0 <= theta < 1:
            raise UsageError(f"zipfian theta must be in [0, 1), got {theta}")
        if n < 1:
            raise UsageError("key space must be non-empty")
        self.n = n
        self.theta = theta
        self.rng = np.random.default_rng(seed)
        if method is None:
            method = "uniform" if theta == 0 else ("exact" if n <= EXACT_LIMIT else "gray")
        self.method = method
        if method == "exact":
            self._cdf = zipf_cdf(n, theta)
        elif method == "gray":
            self._setup_gray()
        elif method != "uniform":
            raise ValueError(f"unknown method {method!r}")
        self._buf = []

    def _setup_gray(self):
        n, theta = self.n, self.theta
        # zeta(n) by direct summation in chunks to bound memory
        zetan = 0.0
        for lo in range(1, n + 1, 1 << 22):
            hi = min(n, lo + (1 << 22) - 1)
            zetan += float(np.sum(np.arange(lo, hi + 1, dtype=np.float64) ** -theta))
        zeta2 = 1.0 + 2.0 ** -theta
        self._zetan = zetan
        self._alpha = 1.0 / (1.0 - theta)
        self._eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta2 / zetan)
        self._half = 0.5 ** theta

    def _refill(self):
        if self.method == "uniform":
            draws = self.rng.integers(0, self.n, size=_CHUNK)
        elif self.method == "exact":
            u = self.rng.random(_CHUNK)
            draws = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.n - 1)
        else:
            u = self.rng.random(_CHUNK)
            uz = u * self._zetan
            draws = (self.n * (self._eta * u - self._eta + 1.0) ** self._alpha).astype(np.int64)
            draws = np.where(uz < 1.0 + self._half, 1, draws)
            draws = np.where(uz < 1.0, 0, draws)
            draws = np.clip(draws, 0, self.n - 1)
        # reversed so pop() yields draws in generation order
        self._buf = draws[::-1].tolist()

    def next(self) -> int:
        if not self._buf:
            self._refill()
        return self._buf.pop()

    __call__ = next

    def sample(self, size):
        return [self.next() for _ in range(size)]


def zipfian_next(state: ZipfianGenerator) -> int:
    return state.next()
