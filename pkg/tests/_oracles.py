"""Independent reference computations used by the tests.

These deliberately avoid the library's own code paths: the brute-force
transport cost enumerates every permutation, and the matrix square root
comes from scipy rather than the package's eigendecomposition.
"""

import itertools
import math

import numpy as np
import scipy.linalg


def w2_brute_force(xs, ys):
    """Exact Wasserstein-2 distance by enumerating all matchings."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = xs.shape[0]
    assert n == ys.shape[0] and n <= 9, "enumeration only for tiny clouds"
    diffs = xs[:, None, :] - ys[None, :, :]
    cost = np.sum(diffs * diffs, axis=2)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return math.sqrt(float(totals.min()) / n)


def bures_scipy(s1, s2):
    """Bures distance via scipy's matrix square root."""
    r = scipy.linalg.sqrtm(np.asarray(s1, dtype=float))
    inner = scipy.linalg.sqrtm(r @ np.asarray(s2, dtype=float) @ r)
    val = np.trace(s1) + np.trace(s2) - 2.0 * np.trace(inner)
    return math.sqrt(max(float(np.real(val)), 0.0))
