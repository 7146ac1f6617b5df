"""Damped-oscillator health monitoring at desk scale.

The monitored plant is a second-order system whose damping and stiffness
coefficients drift affinely with time since maintenance.  This module
simulates plant trajectories, estimates the coefficients from them by
least squares, differences the daily estimates into a zero-mean linear
observation model for the decay rates, and turns a particle belief over
those rates into damping-ratio bands and suggested maintenance times.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .measures import ParticleMeasure, nearest_rank_quantile, substream

_TRAJ_STREAM = 31

# Stiffness floor inside the damping ratio, so extrapolating a belief with
# particles near b = 0 stays defined.
_B_FLOOR = 1e-12

#: Largest time (days) scanned when a decay fit need not be monotone.
_SCAN_CAP = 2000.0


class CrossingTime(NamedTuple):
    """A maintenance-time answer: days plus how the threshold was (not) met.

    ``status`` is ``"crossed"`` for a regular crossing, ``"never"`` when the
    criterion holds forever (``days`` is ``inf``), and ``"immediate"`` when
    it already fails at ``t = 0`` (``days`` is ``0``).
    """

    days: float
    status: str


@dataclass(frozen=True, eq=False)
class PlantParams:
    """Parameters of one simulated trajectory of the second-order plant.

    ``a`` (1/s) and ``b`` (1/s^2) are the damping and stiffness
    coefficients, ``r`` the constant reference, ``dt`` the sampling period,
    ``horizon`` the trajectory duration (s) and ``eps_half_width`` the
    half-width of the uniform reference noise.  The Euler discretization
    must be stable; construction fails otherwise.
    """

    a: float
    b: float
    r: float
    dt: float
    horizon: float
    eps_half_width: float

    def __post_init__(self):
        for name in ("a", "b", "dt", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_half_width < 0:
            raise ValueError("eps_half_width must be nonnegative")
        if not np.isfinite(self.r):
            raise ValueError("r must be finite")
        radius = max(abs(ev) for ev in np.linalg.eigvals(self.transition_matrix()))
        if radius >= 1.0:
            raise NumericalError(
                f"unstable discretization: spectral radius {radius:.6f} >= 1 "
                f"for dt={self.dt}; reduce the sampling period"
            )

    def transition_matrix(self) -> np.ndarray:
        return np.array([[1.0, self.dt], [-self.dt * self.b, 1.0 - self.dt * self.a]])


def simulate_trajectory(p: PlantParams, x0, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the Euler-discretized plant under uniform reference noise.

    Parameters
    ----------
    p : PlantParams
    x0 : array-like, shape (2,)
        Initial state (position, velocity).
    seed : int
        Noise seed; runs are deterministic per seed.

    Returns
    -------
    (states, refs)
        ``states`` has shape ``(n+1, 2)`` with ``n = floor(horizon / dt)``
        transitions; ``refs`` is the constant reference, one entry per state.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite state vector (position, velocity)")
    n = int(p.horizon / p.dt + 1e-9)
    if p.eps_half_width > 0:
        eps = substream(seed, _TRAJ_STREAM).uniform(-p.eps_half_width, p.eps_half_width, n)
    else:
        eps = np.zeros(n)
    dt = p.dt
    a21 = -dt * p.b
    a22 = 1.0 - dt * p.a
    bcoef = dt * p.b
    r = p.r
    zs = np.empty(n + 1)
    vs = np.empty(n + 1)
    z = float(x0[0])
    v = float(x0[1])
    for k in range(n):
        zs[k] = z
        vs[k] = v
        u = r + eps[k]
        z, v = z + dt * v, a21 * z + a22 * v + bcoef * u
    zs[n] = z
    vs[n] = v
    return np.column_stack([zs, vs]), np.full(n + 1, r)


def ls_estimate(traj: tuple[np.ndarray, np.ndarray], dt: float) -> np.ndarray:
    """Least-squares estimate of ``(a, b)`` from one trajectory.

    Only the velocity transitions carry information (the position row of
    the discretization is an exact identity), so the fit regresses the
    discrete accelerations on ``[-velocity, reference - position]``.

    Returns the estimate ``(a_hat, b_hat)``; raises when the regressor is
    rank deficient (no excitation).
    """
    states, refs = traj
    states = np.asarray(states, dtype=float)
    refs = np.asarray(refs, dtype=float)
    if states.ndim != 2 or states.shape[1] != 2 or refs.shape != (states.shape[0],):
        raise ValueError("trajectory must pair (n+1, 2) states with n+1 references")
    if states.shape[0] < 3:
        raise ValueError("need at least two transitions to fit two parameters")
    if not dt > 0:
        raise ValueError("dt must be positive")
    targets = np.diff(states[:, 1]) / dt
    regressors = np.column_stack([-states[:-1, 1], refs[:-1] - states[:-1, 0]])
    sol, _, rank, _ = np.linalg.lstsq(regressors, targets, rcond=None)
    if rank < 2:
        raise NumericalError(
            "rank-deficient regressor: the trajectory does not excite both "
            "parameters; use a longer or richer trajectory"
        )
    return sol


@dataclass(frozen=True, eq=False)
class DegradationModel:
    """Ground truth of the slow parameter drift.

    ``(a0, b0)`` are the coefficients right after maintenance, ``lam`` the
    nonnegative decay rates, ``zeta_min`` the safe damping-ratio floor and
    ``T`` the spacing (days) between measurements.  The fresh system must
    start safe: ``a0 / (2 sqrt(b0)) >= zeta_min``.
    """

    a0: float
    b0: float
    lam: np.ndarray
    zeta_min: float
    T: float

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.shape != (2,) or not np.all(np.isfinite(lam)):
            raise ValueError("lam must be a finite vector (lambda1, lambda2)")
        if np.any(lam < 0):
            raise ValueError("decay rates must be nonnegative")
        if not self.b0 > 0:
            raise ValueError("b0 must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not np.isfinite(self.a0) or not np.isfinite(self.zeta_min):
            raise ValueError("a0 and zeta_min must be finite")
        if self.a0 / (2.0 * math.sqrt(self.b0)) < self.zeta_min:
            raise ValueError("the freshly maintained system must start in the safe set")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "b0", float(self.b0))
        object.__setattr__(self, "zeta_min", float(self.zeta_min))
        object.__setattr__(self, "T", float(self.T))


@dataclass(frozen=True, eq=False)
class Observation:
    """One day's coefficient estimate: time since maintenance plus (a, b)."""

    t: float
    y_hat: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y_hat, dtype=float))
        if y.shape != (2,) or not np.all(np.isfinite(y)):
            raise ValueError("y_hat must be a finite vector (a_hat, b_hat)")
        if not np.isfinite(self.t) or self.t < 0:
            raise ValueError("t must be a nonnegative time")
        y.setflags(write=False)
        object.__setattr__(self, "y_hat", y)
        object.__setattr__(self, "t", float(self.t))


def degrade(d: DegradationModel, t: float) -> np.ndarray:
    """Coefficients ``(a0 - lambda1 t, b0 + lambda2 t)`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return np.array([d.a0 - d.lam[0] * t, d.b0 + d.lam[1] * t])


def damping_ratio(y) -> float:
    """Damping ratio ``a / (2 sqrt(b))`` of coefficients ``y = (a, b)``."""
    y = np.asarray(y, dtype=float)
    a, b = float(y[0]), float(y[1])
    if b <= 0:
        raise ValueError(f"damping ratio undefined for nonpositive stiffness b={b}")
    return a / (2.0 * math.sqrt(b))


def _zeta_at(d: DegradationModel, lam1, lam2, t: float):
    a = d.a0 - lam1 * t
    b = np.maximum(d.b0 + lam2 * t, _B_FLOOR)
    return a / (2.0 * np.sqrt(b))


def true_maintenance_time(d: DegradationModel, tol: float = 1e-6) -> CrossingTime:
    """Last time the true coefficients stay safe, by bisection.

    With nonnegative decay rates the damping ratio is nonincreasing, so the
    safe set is left exactly once.  Returns ``inf`` with status ``"never"``
    when both rates vanish.
    """
    lam1, lam2 = float(d.lam[0]), float(d.lam[1])

    def f(t):
        return float(_zeta_at(d, lam1, lam2, t)) - d.zeta_min

    if f(0.0) < 0:
        return CrossingTime(0.0, "immediate")
    hi = max(d.T, 1.0)
    while f(hi) >= 0:
        hi *= 2.0
        if hi > 1e12:
            return CrossingTime(float("inf"), "never")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return CrossingTime(0.5 * (lo + hi), "crossed")


def process_matrix(T: float) -> np.ndarray:
    """Model matrix ``diag(-T, T)`` induced by differencing spaced estimates."""
    if not T > 0:
        raise ValueError("T must be positive")
    return np.diag([-float(T), float(T)])


def difference_stream(obs: Sequence[Observation]) -> np.ndarray:
    """Consecutive estimate differences ``y_hat[k+1] - y_hat[k]``.

    The observations must be equally spaced in time; the differences then
    follow the linear model with matrix :func:`process_matrix` of the
    spacing and zero-mean noise (each raw noise term appears once with
    either sign).  Returns an ``(len(obs) - 1, 2)`` array.
    """
    if len(obs) < 2:
        raise DataError("need at least two observations to difference")
    times = np.array([o.t for o in obs], dtype=float)
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        i = int(np.flatnonzero(gaps <= 0)[0])
        raise DataError(
            f"observation times must be strictly increasing; offending gap after t={times[i]}"
        )
    spacing = gaps[0]
    off = np.abs(gaps - spacing) > 1e-9
    if np.any(off):
        i = int(np.flatnonzero(off)[0])
        raise DataError(
            f"irregular observation spacing: gap {gaps[i]} between t={times[i]} and "
            f"t={times[i + 1]}, expected {spacing}"
        )
    return np.diff(np.stack([o.y_hat for o in obs]), axis=0)


def observation_residuals(obs: Sequence[Observation], d: DegradationModel) -> np.ndarray:
    """Raw estimate errors ``y_hat(t) - y_true(t)``, one row per observation."""
    return np.stack([o.y_hat - degrade(d, o.t) for o in obs])


def predict_damping_band(
    m: ParticleMeasure,
    d: DegradationModel,
    t_grid,
    p_lo: float = 0.1,
    p_hi: float = 0.9,
) -> np.ndarray:
    """Damping-ratio band of the belief pushed forward through the drift.

    For each ``t`` the particles map to damping ratios of the drifted
    coefficients (stiffness floored near zero) and the row records
    ``(t, lower quantile, mean, upper quantile)`` by the nearest-rank rule.

    Returns a ``(len(t_grid), 4)`` array.
    """
    if m.d != 2:
        raise ValueError("belief particles must be 2-d decay rates")
    if not (0.0 <= p_lo <= p_hi <= 1.0):
        raise ValueError("quantile levels must satisfy 0 <= p_lo <= p_hi <= 1")
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t_grid < 0):
        raise ValueError("t_grid must be nonnegative")
    lam1 = m.points[:, 0]
    lam2 = m.points[:, 1]
    rows = np.empty((t_grid.size, 4))
    for i, t in enumerate(t_grid):
        z = _zeta_at(d, lam1, lam2, float(t))
        rows[i] = (
            t,
            nearest_rank_quantile(z, p_lo),
            float(z.mean()),
            nearest_rank_quantile(z, p_hi),
        )
    return rows


def suggested_maintenance_time(
    m: ParticleMeasure,
    d: DegradationModel,
    rule: str = "percentile",
    level: float = 0.1,
    tol: float = 1e-3,
) -> CrossingTime:
    """Largest time at which the belief still calls the system safe.

    Rules
    -----
    ``"percentile"``
        The ``level``-quantile of the particle damping ratios stays above
        the floor (small levels are conservative).
    ``"mean"``
        The damping ratio at the mean decay rate stays above the floor.
    ``"chance"``
        At least a ``1 - level`` fraction of particles stays above the floor.

    Each criterion is nonincreasing in time for nonnegative decay rates, so
    the answer is found by bisection to ``tol`` days.
    """
    if m.d != 2:
        raise ValueError("belief particles must be 2-d decay rates")
    if rule not in ("percentile", "mean", "chance"):
        raise ValueError(f"unknown rule '{rule}'")
    if rule != "mean" and not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    lam1 = m.points[:, 0]
    lam2 = m.points[:, 1]
    mean_rates = m.points.mean(axis=0)

    def safe(t: float) -> bool:
        if rule == "mean":
            z = float(_zeta_at(d, mean_rates[0], mean_rates[1], t))
            return z >= d.zeta_min
        z = _zeta_at(d, lam1, lam2, t)
        if rule == "percentile":
            return nearest_rank_quantile(z, level) >= d.zeta_min
        return float(np.mean(z >= d.zeta_min)) >= 1.0 - level

    if not safe(0.0):
        return CrossingTime(0.0, "immediate")
    hi = max(d.T, 1.0)
    while safe(hi):
        hi *= 2.0
        if hi > 1e9:
            return CrossingTime(float("inf"), "never")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if safe(mid):
            lo = mid
        else:
            hi = mid
    return CrossingTime(lo, "crossed")


def ls_baseline(
    obs: Sequence[Observation], a0: float, b0: float, zeta_min: float
) -> tuple[np.ndarray, CrossingTime]:
    """Classical static least-squares comparator.

    Fits the decay rates by through-origin regression of the coefficient
    increments on time (``lambda1`` from ``a0 - a_hat``, ``lambda2`` from
    ``b_hat - b0``) and converts the *unclamped* fit into a maintenance
    time.  Negative fitted rates are deliberately kept, so the predicted
    ratio path need not be monotone; the crossing search scans a grid
    before refining.
    """
    if len(obs) < 1:
        raise ValueError("need at least one observation")
    times = np.array([o.t for o in obs], dtype=float)
    denom = float(np.sum(times * times))
    if denom == 0.0:
        raise NumericalError("all observations at t=0: decay rates are unidentifiable")
    a_inc = a0 - np.array([o.y_hat[0] for o in obs])
    b_inc = np.array([o.y_hat[1] for o in obs]) - b0
    lam_hat = np.array(
        [float(np.sum(times * a_inc)) / denom, float(np.sum(times * b_inc)) / denom]
    )

    def zeta(t: float) -> float:
        a = a0 - lam_hat[0] * t
        b = max(b0 + lam_hat[1] * t, _B_FLOOR)
        return a / (2.0 * math.sqrt(b))

    return lam_hat, _last_safe_time(zeta, zeta_min)


def _last_safe_time(zeta, zeta_min: float, cap: float = _SCAN_CAP, tol: float = 1e-6) -> CrossingTime:
    # Robust "last time above the floor" for possibly non-monotone paths:
    # coarse grid scan for the final safe point, then bisection.
    if zeta(0.0) < zeta_min:
        return CrossingTime(0.0, "immediate")
    grid = np.arange(0.0, cap + 0.25, 0.25)
    values = np.array([zeta(float(t)) for t in grid])
    safe = values >= zeta_min
    if safe[-1]:
        return CrossingTime(float("inf"), "never")
    last = int(np.flatnonzero(safe)[-1])
    lo, hi = float(grid[last]), float(grid[last + 1])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if zeta(mid) >= zeta_min:
            lo = mid
        else:
            hi = mid
    return CrossingTime(0.5 * (lo + hi), "crossed")


# -- observation files -----------------------------------------------------

def write_observations_csv(obs: Sequence[Observation], path) -> None:
    """Write observations: header ``t,a_hat,b_hat``, full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "a_hat", "b_hat"])
        for o in obs:
            w.writerow([repr(o.t), repr(float(o.y_hat[0])), repr(float(o.y_hat[1]))])


def read_observations_csv(path) -> list[Observation]:
    """Read observations written by :func:`write_observations_csv`."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty observation file") from None
        if header != ["t", "a_hat", "b_hat"]:
            raise DataError(f"{path}: bad header {header!r}")
        for i, row in enumerate(reader):
            if len(row) != 3:
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected 3")
            try:
                out.append(Observation(float(row[0]), np.array([float(row[1]), float(row[2])])))
            except ValueError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
    if not out:
        raise DataError(f"{path}: observation file contains no rows")
    return out
