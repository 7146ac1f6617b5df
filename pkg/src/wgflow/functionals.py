"""Streaming least-squares objective over particle beliefs and its gradients.

The objective scores a belief ``mu`` over parameters ``theta`` by the
expected model-output error under observation noise plus a spread penalty:

    J(mu) = 1/2 E_mu ||W (theta - theta*)||^2 + 1/2 E||w||^2
            + rho/2 * sum_j Var_mu[theta_j].

The gradient field of ``J`` over the support is

    theta -> W^T W (theta - theta*) + rho (theta - E_mu[theta]),

and replacing ``W theta*`` by a noisy observation ``y = W theta* + w``
gives an unbiased estimate of it that needs no knowledge of ``theta*``.

Note the spread penalty is the *summed coordinate variance* (the trace of
the covariance); that is the functional whose gradient field is the
``rho``-term above, and the one under which the second-moment bound used
by the step-size analysis holds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import measures
from .errors import NumericalError
from .measures import ParticleMeasure


def _rows_times(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise matrix-vector products: row i of the result is ``m @ x[i]``.

    Accumulated column by column with elementwise arithmetic, so the result
    is bitwise identical however the rows are chunked across workers.
    """
    out = np.zeros((x.shape[0], m.shape[0]))
    for j in range(x.shape[1]):
        out += x[:, j, None] * m[None, :, j]
    return out


@dataclass(frozen=True, eq=False)
class StreamingLSObjective:
    """Streaming least-squares estimation objective.

    Parameters
    ----------
    W : ndarray, shape (d, d)
        Invertible process matrix of the observation model ``y = W theta + w``.
    rho : float
        Positive weight on the belief-spread penalty.
    theta_star : ndarray, shape (d,), optional
        True parameter.  Only available in simulation; when absent the
        objective runs in deployment mode and exact evaluations are
        unavailable (stochastic gradients still work).
    sigma_w2 : float
        Total noise second moment ``E ||w||^2`` (summed over coordinates).
    """

    W: np.ndarray
    rho: float
    theta_star: Optional[np.ndarray] = None
    sigma_w2: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.W, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("W must be a square matrix")
        if not np.all(np.isfinite(w)):
            raise ValueError("W must be finite")
        sv = np.linalg.svd(w, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            raise NumericalError(
                f"process matrix is numerically singular (min singular value {sv[-1]:.3e}); "
                "an invertible model is required"
            )
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.sigma_w2 < 0 or not np.isfinite(self.sigma_w2):
            raise ValueError("sigma_w2 must be finite and nonnegative")
        ts = self.theta_star
        if ts is not None:
            ts = np.atleast_1d(np.asarray(ts, dtype=float))
            if ts.shape != (w.shape[0],) or not np.all(np.isfinite(ts)):
                raise ValueError(f"theta_star must be a finite vector of length {w.shape[0]}")
            ts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "sigma_w2", float(self.sigma_w2))
        object.__setattr__(self, "_sigma_min", float(sv[-1]))
        object.__setattr__(self, "_sigma_max", float(sv[0]))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def sigma_min(self) -> float:
        """Smallest singular value of ``W``."""
        return self._sigma_min

    @property
    def sigma_max(self) -> float:
        """Largest singular value of ``W``."""
        return self._sigma_max


class GradientField:
    """A vector field over parameter space, evaluable on one point or a batch.

    Calling with a ``(d,)`` vector returns a ``(d,)`` vector; calling with
    an ``(n, d)`` batch returns an ``(n, d)`` batch.  Fields close over any
    measure statistics they need (e.g. the belief mean), frozen at the time
    the field was built.
    """

    __slots__ = ("_fn",)

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self._fn = fn

    def __call__(self, theta) -> np.ndarray:
        arr = np.asarray(theta, dtype=float)
        if arr.ndim == 1:
            return self._fn(arr[None, :])[0]
        if arr.ndim == 2:
            return self._fn(arr)
        raise ValueError("expected a point (d,) or a batch (n, d)")


def exact_gradient(obj: StreamingLSObjective, m: ParticleMeasure) -> GradientField:
    """Gradient field of the objective with the belief mean frozen now.

    Requires the true parameter (simulation mode).  The returned field
    evaluates ``W^T W (theta - theta*) + rho (theta - mean)`` where ``mean``
    is the mean of ``m`` at call time, so evaluating the field on a batch is
    order-independent.
    """
    if obj.theta_star is None:
        raise ValueError("true parameter unknown: exact gradient unavailable in deployment mode")
    if m.d != obj.d:
        raise ValueError(f"dimension mismatch: measure d={m.d}, objective d={obj.d}")
    wtw = obj.W.T @ obj.W
    mu_mean = measures.mean(m)
    theta_star = obj.theta_star
    rho = obj.rho

    def fn(pts):
        return _rows_times(wtw, pts - theta_star[None, :]) + rho * (pts - mu_mean[None, :])

    return GradientField(fn)


def stochastic_gradient(obj: StreamingLSObjective, theta, y_hat, mu_mean) -> np.ndarray:
    """Unbiased gradient estimate from one observation.

    ``W^T (W theta - y_hat) + rho (theta - mu_mean)``; its expectation over
    ``y_hat = W theta* + w`` (zero-mean ``w``) is the exact gradient.
    Accepts a single ``(d,)`` point or an ``(n, d)`` batch.
    """
    th = np.asarray(theta, dtype=float)
    single = th.ndim == 1
    pts = th[None, :] if single else th
    if pts.ndim != 2 or pts.shape[1] != obj.d:
        raise ValueError(f"theta must have dimension {obj.d}")
    y = np.asarray(y_hat, dtype=float)
    mm = np.asarray(mu_mean, dtype=float)
    if y.shape != (obj.d,) or mm.shape != (obj.d,):
        raise ValueError(f"y_hat and mu_mean must be vectors of length {obj.d}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y_hat must be finite")
    resid = _rows_times(obj.W, pts) - y[None, :]
    out = _rows_times(obj.W.T, resid) + obj.rho * (pts - mm[None, :])
    return out[0] if single else out


def perturbed_gradient(base, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise to a gradient evaluation.

    Zero-mean noise keeps the estimate unbiased while inflating its second
    moment.  ``noise_std = 0`` returns the input values unchanged.
    """
    b = np.asarray(base, dtype=float)
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if noise_std == 0:
        return np.array(b)
    return b + rng.normal(0.0, noise_std, size=b.shape)


def evaluate_objective(obj: StreamingLSObjective, m: ParticleMeasure) -> float:
    """Objective value at a belief (simulation mode only).

    Equals ``1/2 E_mu ||W(theta - theta*)||^2 + 1/2 sigma_w2 +
    rho/2 * tr(cov(mu))``; the noise cross term vanishes because the noise
    is zero-mean, so the value is always at least ``sigma_w2 / 2`` and that
    floor is attained exactly at the Dirac belief on ``theta*``.
    """
    if obj.theta_star is None:
        raise ValueError("true parameter unknown: objective unavailable in deployment mode")
    if m.d != obj.d:
        raise ValueError(f"dimension mismatch: measure d={m.d}, objective d={obj.d}")
    diff = m.points - obj.theta_star[None, :]
    quad = 0.5 * float(np.mean(np.sum((diff @ obj.W.T) ** 2, axis=1)))
    spread = 0.5 * obj.rho * float(np.trace(measures.covariance(m)))
    return quad + 0.5 * obj.sigma_w2 + spread


def generic_gradient_expected_value(v_grad: Callable[[np.ndarray], np.ndarray]) -> GradientField:
    """Gradient field of ``mu -> E_mu[V]``: the field is just ``grad V``."""

    def fn(pts):
        return np.stack([np.asarray(v_grad(x), dtype=float) for x in pts])

    return GradientField(fn)


def generic_gradient_variance(m: ParticleMeasure, i: int) -> GradientField:
    """Gradient field of ``mu -> Var_mu[theta_i]``, mean frozen at call time.

    Evaluates to ``2 (theta_i - E_mu[theta_i]) e_i``; it integrates to zero
    against ``m`` by construction.
    """
    if not 0 <= i < m.d:
        raise ValueError(f"coordinate index {i} out of range for d={m.d}")
    mi = float(measures.mean(m)[i])

    def fn(pts):
        out = np.zeros_like(pts)
        out[:, i] = 2.0 * (pts[:, i] - mi)
        return out

    return GradientField(fn)
