"""Closed convex constraint sets with closed-form Euclidean projections.

Only variants whose projection has a closed form are provided, which keeps
the cost of projecting an ``N``-particle cloud at ``O(N d)``.  Point and
measure projections are pure; projecting twice is a strict no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .measures import ParticleMeasure

# Relative slack for "already inside" tests.  It absorbs the rounding of a
# freshly projected point, making repeated projection exactly idempotent.
_SNAP = 1e-13


class ConvexSet:
    """A closed convex subset of R^d with an exact nearest-point map."""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def project_points(self, pts: np.ndarray) -> np.ndarray:
        """Project each row of ``pts`` onto the set. Shape is preserved."""
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-12) -> bool:
        """Whether ``x`` satisfies the defining inequalities within ``tol``."""
        raise NotImplementedError

    def _check_points(self, pts: np.ndarray) -> None:
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(
                f"points of dimension {pts.shape[-1] if pts.ndim else '?'} "
                f"do not match set dimension {self.dim}"
            )


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    """Axis-aligned box ``{x : lo <= x <= hi}``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            j = int(np.flatnonzero(lo > hi)[0])
            raise ValueError(f"invalid box: lo > hi in coordinate {j}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def project_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        self._check_points(pts)
        return np.clip(pts, self.lo, self.hi)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass(frozen=True, eq=False)
class NonnegativeOrthant(ConvexSet):
    """The orthant ``{x : x >= 0}``."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")

    @property
    def dim(self) -> int:
        return self.d

    def project_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        self._check_points(pts)
        return np.maximum(pts, 0.0)

    def contains(self, x, tol=1e-12):
        return bool(np.all(np.asarray(x, dtype=float) >= -tol))


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """Halfspace ``{x : a . x <= b}`` with ``a != 0``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if a.ndim != 1 or not np.all(np.isfinite(a)) or not np.any(a != 0.0):
            raise ValueError("halfspace normal must be a finite nonzero vector")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "_a_norm2", float(a @ a))

    @property
    def dim(self) -> int:
        return self.a.size

    def _gap(self, pts):
        # a.x - b accumulated coordinate by coordinate (plus a magnitude
        # scale), so results do not depend on how rows are chunked.
        t = np.full(pts.shape[0], -self.b)
        s = np.full(pts.shape[0], abs(self.b))
        for j in range(self.dim):
            c = pts[:, j] * self.a[j]
            t = t + c
            s = s + np.abs(c)
        return t, s

    def project_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        self._check_points(pts)
        t, s = self._gap(pts)
        out = pts.copy()
        mask = t > _SNAP * s
        if mask.any():
            shift = t[mask] / self._a_norm2
            out[mask] = out[mask] - shift[:, None] * self.a[None, :]
        return out

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        t, s = self._gap(x[None, :])
        return bool(t[0] <= tol * max(1.0, s[0]))


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("ball center must be a finite vector")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("ball radius must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def _dist(self, pts):
        r2 = np.zeros(pts.shape[0])
        for j in range(self.dim):
            diff = pts[:, j] - self.center[j]
            r2 = r2 + diff * diff
        return np.sqrt(r2)

    def project_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        self._check_points(pts)
        dist = self._dist(pts)
        out = pts.copy()
        mask = dist > self.radius * (1.0 + _SNAP)
        if mask.any():
            scale = self.radius / dist[mask]
            out[mask] = self.center[None, :] + scale[:, None] * (out[mask] - self.center[None, :])
        return out

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(self._dist(x[None, :])[0] <= self.radius + tol * max(1.0, self.radius))


@dataclass(frozen=True, eq=False)
class FullSpace(ConvexSet):
    """All of R^d (no constraint)."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")

    @property
    def dim(self) -> int:
        return self.d

    def project_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        self._check_points(pts)
        return pts.copy()

    def contains(self, x, tol=1e-12):
        return True


def project_point(s: ConvexSet, x) -> np.ndarray:
    """Euclidean nearest point of ``s`` to ``x``; a point already in ``s``
    is returned unchanged."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a single point (1-d vector)")
    return s.project_points(x[None, :])[0]


def project_measure(s: ConvexSet, m: ParticleMeasure) -> ParticleMeasure:
    """Project every particle of ``m`` onto ``s``.

    This realizes the Wasserstein-nearest measure supported in ``s``:
    projecting particles individually is optimal, and the operation is
    idempotent.
    """
    return ParticleMeasure(s.project_points(m.points))


def convex_set_from_config(record: dict) -> ConvexSet:
    """Build a set from a tagged record, e.g. ``{"kind": "nonneg_orthant", "d": 2}``.

    Kinds: ``box`` (lo, hi), ``nonneg_orthant`` (d), ``halfspace`` (a, b),
    ``ball`` (center, radius), ``all`` (d).
    """
    if not isinstance(record, dict) or "kind" not in record:
        raise ConfigError("constraint must be a record with a 'kind' field")
    kind = record["kind"]
    try:
        if kind == "box":
            return Box(np.asarray(record["lo"], float), np.asarray(record["hi"], float))
        if kind == "nonneg_orthant":
            return NonnegativeOrthant(int(record["d"]))
        if kind == "halfspace":
            return Halfspace(np.asarray(record["a"], float), float(record["b"]))
        if kind == "ball":
            return Ball(np.asarray(record["center"], float), float(record["radius"]))
        if kind == "all":
            return FullSpace(int(record["d"]))
    except KeyError as exc:
        raise ConfigError(f"constraint kind '{kind}' is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid constraint parameters: {exc}") from None
    raise ConfigError(f"unknown constraint kind '{kind}'")
