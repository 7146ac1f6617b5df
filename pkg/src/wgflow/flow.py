"""Stochastic projected gradient descent over particle beliefs.

One iteration consumes one observation: freeze the belief mean, evaluate
the stochastic gradient field on every particle, optionally perturb it
with zero-mean noise, take an explicit Euler step of size ``tau``, and
project every particle back onto the constraint set.  The module also
derives the constants governing convergence (contraction rate, largest
safe step, asymptotic ball radius) so runs can be judged against them.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import functionals, measures, transport
from .errors import DataError, NumericalError, UnsafeStepError
from .functionals import StreamingLSObjective
from .measures import ParticleMeasure
from .sets import ConvexSet

_PERTURB_STREAM = 21
_DIAG_STREAM = 22


@dataclass(frozen=True)
class StepBoundReport:
    """Derived constants of the estimation objective and a step size verdict.

    Attributes
    ----------
    alpha : float
        Strong convexity modulus, ``sigma_min(W)^2``.
    C : float
        Gradient second-moment growth constant, ``4 max(sigma_max(W)^2, rho)``.
    sigma2 : float
        Gradient noise floor, ``C * sigma_w2``.
    eta : float
        Condition-like ratio ``C / alpha``.
    tau : float
        The step size under scrutiny.
    tau_max : float
        Largest admissible step, ``min(1/alpha, 2/C)`` (open interval).
    simple_cap : float
        The equivalent simplified cap ``1 / (2 max(sigma_max(W)^2, rho))``.
    ball_radius : float
        Asymptotic expected distance bound, ``sigma_w * sqrt(eta * tau)``.
    per_step_rate : float
        Squared-distance contraction factor per step, ``1 - alpha * tau``.
    tau_valid : bool
        Whether ``tau`` lies strictly inside ``(0, tau_max)``.
    """

    alpha: float
    C: float
    sigma2: float
    eta: float
    tau: float
    tau_max: float
    simple_cap: float
    ball_radius: float
    per_step_rate: float
    tau_valid: bool


def validate_tau(W, rho: float, sigma_w2: float, tau: float) -> StepBoundReport:
    """Derive the convergence constants and check a step size against them."""
    w = np.asarray(W, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("W must be a square matrix")
    sv = np.linalg.svd(w, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise NumericalError(
            f"process matrix is numerically singular (min singular value {sv[-1]:.3e}); "
            "an invertible model is required"
        )
    if not rho > 0:
        raise ValueError("rho must be positive")
    if sigma_w2 < 0:
        raise ValueError("sigma_w2 must be nonnegative")
    if not tau > 0:
        raise ValueError("tau must be positive")
    alpha = float(sv[-1]) ** 2
    c = 4.0 * max(float(sv[0]) ** 2, rho)
    sigma2 = c * sigma_w2
    eta = c / alpha
    tau_max = min(1.0 / alpha, 2.0 / c)
    simple_cap = 1.0 / (2.0 * max(float(sv[0]) ** 2, rho))
    ball_radius = math.sqrt(sigma_w2) * math.sqrt(eta * tau)
    return StepBoundReport(
        alpha=alpha,
        C=c,
        sigma2=sigma2,
        eta=eta,
        tau=float(tau),
        tau_max=tau_max,
        simple_cap=simple_cap,
        ball_radius=ball_radius,
        per_step_rate=1.0 - alpha * tau,
        tau_valid=bool(tau < tau_max),
    )


def convergence_bound(report: StepBoundReport, w2_0: float, k: int) -> float:
    """Theoretical bound on the expected squared distance after ``k`` steps.

    ``(1 - tau*alpha)^k (w2_0^2 - tau*sigma2/alpha) + tau*sigma2/alpha``;
    at ``k = 0`` this is exactly ``w2_0^2`` and for large ``k`` it tends
    monotonically to the limit term.
    """
    if w2_0 < 0:
        raise ValueError("w2_0 must be nonnegative")
    if k < 0:
        raise ValueError("k must be nonnegative")
    limit = report.tau * report.sigma2 / report.alpha
    return (1.0 - report.tau * report.alpha) ** k * (w2_0 ** 2 - limit) + limit


def step(m: ParticleMeasure, field_values, tau: float, s: ConvexSet) -> ParticleMeasure:
    """One projected descent step: ``x_i -> proj_S(x_i - tau * xi_i)``.

    ``field_values`` holds the gradient field evaluated per particle, in
    particle order; the order is preserved in the result and every output
    particle lies in ``s``.
    """
    fv = np.asarray(field_values, dtype=float)
    if fv.shape != (m.n, m.d):
        raise ValueError(f"field values must have shape ({m.n}, {m.d}), got {fv.shape}")
    if s.dim != m.d:
        raise ValueError(f"constraint dimension {s.dim} does not match measure dimension {m.d}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    moved = m.points - tau * fv
    return ParticleMeasure(s.project_points(moved))


@dataclass
class TraceRow:
    """One diagnostics record of a run (in-memory form)."""

    k: int
    objective: Optional[float]
    w2_ref: Optional[float]
    mean: np.ndarray
    cov_trace: float
    grad_norm: Optional[float]


@dataclass
class FlowTrace:
    """Diagnostics rows (increasing ``k``) plus how many steps really ran."""

    rows: list[TraceRow] = field(default_factory=list)
    iterations_run: int = 0


@dataclass
class FlowConfig:
    """Run parameters for the descent loop.

    ``diag_every`` controls the trace stride; ``diag_subsample`` bounds the
    cloud size used for exact transport diagnostics.  ``workers`` chunks the
    per-particle sweep; any worker count produces bit-identical results.
    ``on_invalid`` chooses between aborting on a bad observation (default)
    and skipping it with a log message.
    """

    tau: float
    max_iters: int
    seed: int
    constraint: ConvexSet
    perturb_std: float = 0.0
    diag_every: int = 10
    diag_subsample: int = 256
    allow_unsafe_tau: bool = False
    on_invalid: str = "abort"
    workers: int = 1
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.perturb_std < 0:
            raise ValueError("perturb_std must be nonnegative")
        if self.diag_every < 1:
            raise ValueError("diag_every must be at least 1")
        if self.diag_subsample < 1:
            raise ValueError("diag_subsample must be at least 1")
        if self.on_invalid not in ("abort", "skip"):
            raise ValueError("on_invalid must be 'abort' or 'skip'")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")


def _field_sweep(obj, pts, y, mu_mean, workers):
    # Chunked evaluation of the per-particle gradient.  The arithmetic is
    # elementwise per row, so the chunking cannot change the bits.
    if workers <= 1 or pts.shape[0] < 2 * workers:
        return functionals.stochastic_gradient(obj, pts, y, mu_mean)
    chunks = np.array_split(np.arange(pts.shape[0]), workers)
    parts = [functionals.stochastic_gradient(obj, pts[c], y, mu_mean) for c in chunks]
    return np.concatenate(parts, axis=0)


def run(
    m0: ParticleMeasure,
    obj: StreamingLSObjective,
    stream: Iterable,
    cfg: FlowConfig,
    start_iteration: int = 0,
) -> tuple[ParticleMeasure, FlowTrace]:
    """Run the descent, consuming one observation per iteration.

    The iteration index ``k`` counts observations (``start_iteration``
    offsets it when resuming from a checkpoint); perturbation noise is
    drawn from a stream keyed by ``(seed, k)``, so a resumed run reproduces
    the uninterrupted one bit for bit.  Diagnostics rows are recorded at
    ``k = 0``, every ``diag_every`` iterations and at the final iterate.
    If the stream runs out early the trace's ``iterations_run`` reports the
    actual count.
    """
    if m0.d != obj.d:
        raise ValueError(f"dimension mismatch: measure d={m0.d}, objective d={obj.d}")
    if cfg.constraint.dim != m0.d:
        raise ValueError(
            f"constraint dimension {cfg.constraint.dim} does not match measure dimension {m0.d}"
        )
    if cfg.diag_subsample > m0.n:
        raise ValueError(
            f"diag_subsample {cfg.diag_subsample} exceeds particle count {m0.n}"
        )
    if start_iteration < 0:
        raise ValueError("start_iteration must be nonnegative")

    report = validate_tau(obj.W, obj.rho, obj.sigma_w2, cfg.tau)
    if not report.tau_valid and not cfg.allow_unsafe_tau:
        raise UnsafeStepError(
            f"step size {cfg.tau} is not inside (0, {report.tau_max}); "
            "pass allow_unsafe_tau=True to run anyway"
        )

    # Diagnostics subsample: one seeded index set, fixed across iterations.
    sub_idx = None
    ref_measure = None
    if obj.theta_star is not None:
        if cfg.diag_subsample < m0.n:
            rng = measures.substream(cfg.seed, _DIAG_STREAM)
            sub_idx = np.sort(rng.choice(m0.n, size=cfg.diag_subsample, replace=False))
        ref_size = cfg.diag_subsample if sub_idx is not None else m0.n
        ref_measure = ParticleMeasure(np.tile(obj.theta_star, (ref_size, 1)))

    trace = FlowTrace()

    def record(k, m, grad_norm):
        objective = w2 = None
        if obj.theta_star is not None:
            objective = functionals.evaluate_objective(obj, m)
            cloud = m.points if sub_idx is None else m.points[sub_idx]
            w2, _ = transport.w2_exact(ParticleMeasure(cloud), ref_measure)
        trace.rows.append(
            TraceRow(
                k=k,
                objective=objective,
                w2_ref=w2,
                mean=measures.mean(m),
                cov_trace=float(np.trace(measures.covariance(m))),
                grad_norm=grad_norm,
            )
        )

    m = m0
    k = start_iteration
    record(k, m, None)
    last_recorded = k
    last_grad_norm = None

    it = iter(stream)
    for _ in range(cfg.max_iters):
        try:
            y = next(it)
        except StopIteration:
            break
        y = np.asarray(y, dtype=float)
        ok = y.shape == (m.d,) and bool(np.all(np.isfinite(y)))
        if not ok:
            if cfg.on_invalid == "abort":
                raise DataError(f"invalid observation at iteration {k}: {y!r}")
            logging.getLogger(__name__).warning(
                "skipping invalid observation at iteration %d", k
            )
            k += 1
            continue

        mu_mean = m.points.mean(axis=0)
        xi = _field_sweep(obj, m.points, y, mu_mean, cfg.workers)
        if cfg.perturb_std > 0:
            rng = measures.substream(cfg.seed, _PERTURB_STREAM, k)
            xi = functionals.perturbed_gradient(xi, cfg.perturb_std, rng)
        last_grad_norm = math.sqrt(float(np.mean(np.sum(xi * xi, axis=1))))
        m = step(m, xi, cfg.tau, cfg.constraint)
        k += 1

        if (k - start_iteration) % cfg.diag_every == 0:
            record(k, m, last_grad_norm)
            last_recorded = k
        if cfg.checkpoint_every and cfg.checkpoint_path is not None:
            if (k - start_iteration) % cfg.checkpoint_every == 0:
                write_checkpoint(cfg.checkpoint_path, m, k, cfg.seed)

    if last_recorded != k:
        record(k, m, last_grad_norm)
    trace.iterations_run = k - start_iteration
    return m, trace


def lipschitz_norm_gap(m: ParticleMeasure, ref: ParticleMeasure, phi, L: float) -> float:
    """Absolute gap between the empirical L2 norms of ``phi`` under two clouds.

    For an ``L``-Lipschitz ``phi`` the gap is bounded by ``L`` times the
    Wasserstein distance between the clouds; ``L`` is declared by the
    caller and only validated here.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    a = math.sqrt(float(np.mean([float(phi(x)) ** 2 for x in m.points])))
    b = math.sqrt(float(np.mean([float(phi(x)) ** 2 for x in ref.points])))
    return abs(a - b)


# -- trace and checkpoint files ------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_trace_csv(trace: FlowTrace, path, d: int) -> None:
    """Write trace rows: ``k,objective,w2_ref,mean_1..mean_d,grad_norm``.

    Absent quantities become empty fields.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["k", "objective", "w2_ref"]
            + [f"mean_{j + 1}" for j in range(d)]
            + ["grad_norm"]
        )
        for row in trace.rows:
            w.writerow(
                [str(row.k), _fmt(row.objective), _fmt(row.w2_ref)]
                + [repr(float(v)) for v in row.mean]
                + [_fmt(row.grad_norm)]
            )


def read_trace_csv(path) -> FlowTrace:
    """Read a trace file written by :func:`write_trace_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty trace file") from None
        if len(header) < 5 or header[:3] != ["k", "objective", "w2_ref"] or header[-1] != "grad_norm":
            raise DataError(f"{path}: unexpected trace header {header!r}")
        d = len(header) - 4
        trace = FlowTrace()
        prev_k = None
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: malformed trace row {row!r}")
            k = int(row[0])
            if prev_k is not None and k <= prev_k:
                raise DataError(f"{path}: trace rows out of order at k={k}")
            prev_k = k
            opt = float(row[1]) if row[1] else None
            w2 = float(row[2]) if row[2] else None
            mean_vec = np.array([float(v) for v in row[3 : 3 + d]])
            gn = float(row[-1]) if row[-1] else None
            trace.rows.append(
                TraceRow(k=k, objective=opt, w2_ref=w2, mean=mean_vec, cov_trace=float("nan"), grad_norm=gn)
            )
        if trace.rows:
            trace.iterations_run = trace.rows[-1].k - trace.rows[0].k
    return trace


def write_checkpoint(path_base: str, m: ParticleMeasure, iteration: int, seed: int) -> None:
    """Write a resumable snapshot: particle CSV plus a key-value sidecar.

    The sidecar records the iteration counter and the seed; together they
    fully determine every remaining random draw (streams are keyed by
    ``(seed, iteration)``), so resuming reproduces the uninterrupted run
    bit for bit.
    """
    measures.write_particles_csv(m, path_base + ".particles.csv")
    with open(path_base + ".meta.txt", "w") as fh:
        fh.write(f"iteration = {iteration}\n")
        fh.write(f"seed = {seed}\n")
        fh.write("rng = substreams keyed by (seed, purpose, iteration)\n")


def read_checkpoint(path_base: str) -> tuple[ParticleMeasure, int, int]:
    """Read a snapshot written by :func:`write_checkpoint`."""
    m = measures.read_particles_csv(path_base + ".particles.csv")
    meta = {}
    with open(path_base + ".meta.txt") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    try:
        return m, int(meta["iteration"]), int(meta["seed"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path_base}.meta.txt: bad checkpoint metadata ({exc})") from None
