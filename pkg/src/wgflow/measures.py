"""Equal-weight particle measures on R^d and their basic statistics.

A measure is represented by the positions of ``N`` equally weighted
particles (an empirical measure, weight ``1/N`` each).  Measures are
immutable after construction and every operation here is pure, so values
can be shared freely across threads.
"""

from __future__ import annotations

import csv
import math
from typing import Callable

import numpy as np

from .errors import DataError

# Spawn-key tag for the uniform-box sampler, keeping its draws disjoint
# from every other stream derived from the same seed.
_BOX_STREAM = 11


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic random generator for ``(seed, *key)``.

    Streams with distinct keys are statistically independent and do not
    depend on the order in which they are created, so callers may consume
    them in any schedule (including concurrently) with reproducible
    results.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def spawn_seed(seed: int, *key: int) -> int:
    """Derive a child integer seed from ``(seed, *key)``, deterministically."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    state = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint32)
    return int(state[0]) * (1 << 32) + int(state[1])


class ParticleMeasure:
    """Uniformly weighted empirical measure ``(1/N) sum_i delta_{x_i}``.

    Parameters
    ----------
    points : array-like, shape (N, d)
        Particle positions; every coordinate must be finite and ``N >= 1``,
        ``d >= 1``.  The array is copied and frozen.
    """

    __slots__ = ("_points",)

    def __init__(self, points):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2:
            raise ValueError(
                f"points must form a 2-d array of shape (N, d), got ndim={pts.ndim}"
            )
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"need N >= 1 and d >= 1, got shape {pts.shape}")
        finite_rows = np.isfinite(pts).all(axis=1)
        if not finite_rows.all():
            bad = int(np.flatnonzero(~finite_rows)[0])
            raise ValueError(f"non-finite coordinate in particle {bad}")
        pts.setflags(write=False)
        self._points = pts

    @property
    def points(self) -> np.ndarray:
        """Read-only ``(N, d)`` array of particle positions."""
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def d(self) -> int:
        return self._points.shape[1]

    def __repr__(self) -> str:
        return f"ParticleMeasure(n={self.n}, d={self.d})"


def pushforward(m: ParticleMeasure, f: Callable[[np.ndarray], np.ndarray]) -> ParticleMeasure:
    """Apply a map to every particle, preserving particle order.

    Parameters
    ----------
    m : ParticleMeasure
    f : callable
        Map from a ``(d,)`` point to a ``(d,)`` point.

    Returns
    -------
    ParticleMeasure
        The image measure; ``N`` and ``d`` are unchanged.
    """
    out = np.empty((m.n, m.d))
    for i, x in enumerate(m.points):
        y = np.asarray(f(x), dtype=float).reshape(-1)
        if y.shape != (m.d,):
            raise ValueError(
                f"map returned shape {y.shape} at particle {i}, expected ({m.d},)"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError(f"map produced a non-finite coordinate at particle {i}")
        out[i] = y
    return ParticleMeasure(out)


def mean(m: ParticleMeasure) -> np.ndarray:
    """Particle average, a ``(d,)`` vector."""
    return m.points.mean(axis=0)


def covariance(m: ParticleMeasure) -> np.ndarray:
    """Population covariance matrix (divisor ``N``), symmetrized."""
    centered = m.points - m.points.mean(axis=0)
    s = centered.T @ centered / m.n
    return (s + s.T) / 2.0


def variance_of_sum(m: ParticleMeasure) -> float:
    """Population variance of the scalar ``s(x) = x_1 + ... + x_d``."""
    s = m.points.sum(axis=1)
    return float(np.mean((s - s.mean()) ** 2))


def nearest_rank_quantile(values, p: float) -> float:
    """Empirical ``p``-quantile by the nearest-rank rule.

    Returns the value at 1-based index ``ceil(p * N)`` of the sorted list
    (``p = 0`` maps to the minimum).  No interpolation is performed.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    v = np.sort(np.asarray(values, dtype=float))
    n = v.shape[0]
    if n == 0:
        raise ValueError("quantile of an empty collection")
    t = p * n
    # Guard against float products landing a hair above an integer rank.
    k = int(round(t)) if abs(t - round(t)) < 1e-9 else int(math.ceil(t))
    k = min(max(k, 1), n)
    return float(v[k - 1])


def percentile(m: ParticleMeasure, g: Callable[[np.ndarray], float], p: float) -> float:
    """Nearest-rank ``p``-quantile of ``{g(x_i)}`` over the particles."""
    values = np.array([float(g(x)) for x in m.points])
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValueError(f"g is non-finite at particle {bad}")
    return nearest_rank_quantile(values, p)


def init_uniform_box(lo, hi, n: int, seed: int) -> ParticleMeasure:
    """Draw ``n`` i.i.d. uniform particles in the closed box ``[lo, hi]``.

    Deterministic for a fixed seed; a degenerate box (``lo == hi``) yields
    identical particles.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.ndim != 1 or lo.shape != hi.shape:
        raise ValueError("lo and hi must be vectors of equal length")
    if n < 1:
        raise ValueError("need at least one particle")
    if np.any(lo > hi):
        j = int(np.flatnonzero(lo > hi)[0])
        raise ValueError(f"invalid box: lo > hi in coordinate {j}")
    rng = substream(seed, _BOX_STREAM)
    pts = rng.uniform(lo, hi, size=(n, lo.size))
    return ParticleMeasure(pts)


def _format(v: float) -> str:
    # repr of a Python float is the shortest string that round-trips.
    return repr(float(v))


def write_particles_csv(m: ParticleMeasure, path) -> None:
    """Write a particle checkpoint: header ``x1,...,xd``, one row per
    particle in particle order, full round-trip precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(m.d)])
        for row in m.points:
            w.writerow([_format(v) for v in row])


def read_particles_csv(path) -> ParticleMeasure:
    """Read a particle checkpoint written by :func:`write_particles_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty particle file") from None
        expected = [f"x{j + 1}" for j in range(len(header))]
        if header != expected:
            raise DataError(f"{path}: bad header {header!r}, expected {expected!r}")
        rows = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: particle file contains no particles")
    try:
        return ParticleMeasure(np.array(rows))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
