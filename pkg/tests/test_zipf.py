import math
from collections import Counter

import numpy as np
import pytest

from corodb import UsageError
from corodb.bench.zipf import ZipfianGenerator, zipf_cdf, zipfian_next


def harmonic(n, theta):
    # independent oracle: plain float summation, no numpy
    return math.fsum(1.0 / i ** theta for i in range(1, n + 1))


def test_uniform_limit_within_three_sigma():
    g = ZipfianGenerator(100, 0.0, seed=1)
    counts = np.bincount(np.array(g.sample(1_000_000)), minlength=100)
    sigma = math.sqrt(1_000_000 * 0.01 * 0.99)
    assert counts.size == 100 and counts.sum() == 1_000_000
    dev = np.abs(counts - 10_000)
    # each key is within 3 sigma with p=0.9973, so ~0.27 of 100 keys miss
    # for a perfect generator; more than 3 misses has p < 0.003
    assert np.count_nonzero(dev > 3 * sigma) <= 3
    assert np.all(dev <= 4.5 * sigma)
    chi2 = float(((counts - 10_000) ** 2).sum() / 10_000)
    assert chi2 < 148.2  # 99.9th percentile of chi-square with 99 dof


@pytest.mark.parametrize("method", ["exact", "gray"])
def test_hottest_key_matches_analytic_head(method):
    n, theta, draws = 1000, 0.99, 1_000_000
    g = ZipfianGenerator(n, theta, seed=2, method=method)
    counts = Counter(g.sample(draws))
    expected = 1.0 / harmonic(n, theta)
    observed = counts[0] / draws
    tol = 0.02 if method == "exact" else 0.05
    assert abs(observed - expected) / expected < tol
    assert counts.most_common(1)[0][0] == 0


def test_exact_cdf_matches_oracle():
    n, theta = 500, 0.7
    cdf = zipf_cdf(n, theta)
    h = harmonic(n, theta)
    for k in (1, 2, 10, 250, 500):
        assert cdf[k - 1] == pytest.approx(math.fsum(1 / i ** theta for i in range(1, k + 1)) / h,
                                           rel=1e-12)


def test_range_and_determinism():
    a = ZipfianGenerator(50, 0.9, seed=9)
    b = ZipfianGenerator(50, 0.9, seed=9)
    sa = [zipfian_next(a) for _ in range(10_000)]
    assert sa == [b() for _ in range(10_000)]
    assert min(sa) >= 0 and max(sa) < 50
    assert sa != ZipfianGenerator(50, 0.9, seed=10).sample(10_000)


@pytest.mark.parametrize("theta", [1.0, 1.5, -0.1])
def test_theta_out_of_range(theta):
    with pytest.raises(UsageError):
        ZipfianGenerator(10, theta)


def test_skew_grows_with_theta():
    heads = [Counter(ZipfianGenerator(1000, t, seed=3).sample(50_000))[0] for t in (0.0, 0.5, 0.9)]
    assert heads[0] < heads[1] < heads[2]
