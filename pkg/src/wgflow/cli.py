"""Command-line front end: simulate, flow, predict, diagnose.

Configuration is a flat ``key = value`` text file; any key can be
overridden on the command line as ``--key value``.  ``--paper-preset``
loads the full desk-scale case-study parameter set as defaults, so each
pipeline stage runs with one command.  Every command validates its whole
configuration before writing anything, and all outputs are deterministic
given (config, seed).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error, 5 refused unsafe step size.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import flow, functionals, measures, pdm, sets, transport
from .errors import ConfigError, DataError, EngineError, NumericalError, UnsafeStepError

_SIM_DAY_STREAM = 41
_DIAG_SUB_STREAM = 61

#: Desk-scale case-study constants loaded by --paper-preset.
CASE_STUDY_PRESET = {
    "a0": "2.5",
    "b0": "1",
    "lambda1": repr(2.0 / 60.0),
    "lambda2": repr(5.0 / 60.0),
    "zeta_min": "0.4",
    "T": "5",
    "days": "10",
    "dt": "0.001",
    "horizon": "100",
    "eps_half_width": "3",
    "r": "1",
    "x0": "-2.5,0",
    "n_particles": "1000",
    "rho": "0.1",
    "tau": "0.01",
    "perturb_std": "0.02",
    "sigma_w2": "0",
    "init_lo": "0,0",
    "init_hi": repr(8.0 / 60.0) + "," + repr(8.0 / 60.0),
    "constraint": '{"kind": "nonneg_orthant", "d": 2}',
    "theta_star": repr(2.0 / 60.0) + "," + repr(5.0 / 60.0),
    "p_lo": "0.1",
    "p_hi": "0.9",
    "rule": "percentile",
    "rule_level": "0.1",
    "chance_alpha": "0.1",
    "t_start": "0",
    "t_stop": "60",
    "t_step": "0.5",
    "diag_every": "1",
    "diag_subsample": "256",
    "workers": "1",
    "seed": "0",
}


class Config:
    """Flat string-to-string configuration with typed accessors."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    def has(self, key: str) -> bool:
        return key in self.values

    def _raw(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required config key '{key}'")
        return default

    def get_str(self, key: str, default=None) -> str:
        return str(self._raw(key, default))

    def get_float(self, key: str, default=None) -> float:
        raw = self._raw(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' must be a number, got {raw!r}") from None

    def get_int(self, key: str, default=None) -> int:
        raw = self._raw(key, default)
        try:
            return int(str(raw))
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' must be an integer, got {raw!r}") from None

    def get_vec(self, key: str, default=None) -> np.ndarray:
        raw = self._raw(key, default)
        try:
            return np.array([float(v) for v in str(raw).split(",")])
        except ValueError:
            raise ConfigError(
                f"config key '{key}' must be comma-separated numbers, got {raw!r}"
            ) from None

    def get_record(self, key: str, default=None) -> dict:
        raw = self._raw(key, default)
        try:
            record = json.loads(str(raw))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config key '{key}' is not a valid tagged record: {exc}") from None
        if not isinstance(record, dict):
            raise ConfigError(f"config key '{key}' must be a JSON object")
        return record


def _parse_config_file(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def _parse_overrides(extra: list[str]) -> dict[str, str]:
    if len(extra) % 2 != 0:
        raise ConfigError(f"overrides must come in '--key value' pairs, got {extra!r}")
    values = {}
    for flag, value in zip(extra[0::2], extra[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected an override flag, got {flag!r}")
        values[flag[2:].replace("-", "_")] = value
    return values


def _build_config(args, extra: list[str]) -> Config:
    values: dict[str, str] = {}
    if args.paper_preset:
        values.update(CASE_STUDY_PRESET)
    if args.config:
        values.update(_parse_config_file(args.config))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    values.update(_parse_overrides(extra))
    return Config(values)


def _input_path(cfg: Config, key: str, out_dir: str, default_name: str) -> str:
    path = cfg.get_str(key, os.path.join(out_dir, default_name))
    if not os.path.isfile(path):
        raise ConfigError(f"input file for '{key}' not found: {path}")
    return path


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: Config, out_dir: str, force: bool) -> int:
    model = _degradation_model(cfg, require_truth=True)
    dt = cfg.get_float("dt")
    horizon = cfg.get_float("horizon")
    eps = cfg.get_float("eps_half_width")
    r = cfg.get_float("r")
    x0 = cfg.get_vec("x0", "0,0")
    days = cfg.get_int("days")
    seed = cfg.get_int("seed", "0")
    if days < 1:
        raise ConfigError("days must be at least 1")
    if x0.shape != (2,):
        raise ConfigError("x0 must have two components (position, velocity)")

    # Build every day's plant up front: an unstable discretization on any
    # day refuses the whole run before anything is written.
    day_times = [j * model.T for j in range(days)]
    try:
        plants = [
            pdm.PlantParams(
                a=float(pdm.degrade(model, t)[0]),
                b=float(pdm.degrade(model, t)[1]),
                r=r,
                dt=dt,
                horizon=horizon,
                eps_half_width=eps,
            )
            for t in day_times
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    observations = []
    for j, (t, plant) in enumerate(zip(day_times, plants)):
        traj = pdm.simulate_trajectory(plant, x0, measures.spawn_seed(seed, _SIM_DAY_STREAM, j))
        y_hat = pdm.ls_estimate(traj, dt)
        observations.append(pdm.Observation(t, y_hat))

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "observations.csv")
    pdm.write_observations_csv(observations, path)

    residuals = pdm.observation_residuals(observations, model)
    print(f"wrote {path} ({len(observations)} observations, spacing {model.T} days)")
    print(
        "raw estimate noise: mean "
        f"({residuals[:, 0].mean():.3e}, {residuals[:, 1].mean():.3e}), "
        f"std ({residuals[:, 0].std():.3e}, {residuals[:, 1].std():.3e})"
    )
    return 0


def cmd_flow(cfg: Config, out_dir: str, force: bool) -> int:
    obs_path = _input_path(cfg, "observations", out_dir, "observations.csv")
    observations = pdm.read_observations_csv(obs_path)
    diffs = pdm.difference_stream(observations)
    spacing = observations[1].t - observations[0].t
    w = pdm.process_matrix(spacing)

    theta_star = cfg.get_vec("theta_star") if cfg.has("theta_star") else None
    rho = cfg.get_float("rho", "0.1")
    sigma_w2 = cfg.get_float("sigma_w2", "0")
    try:
        obj = functionals.StreamingLSObjective(w, rho, theta_star, sigma_w2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    constraint = sets.convex_set_from_config(
        cfg.get_record("constraint", '{"kind": "nonneg_orthant", "d": 2}')
    )
    seed = cfg.get_int("seed", "0")

    start_iteration = 0
    if cfg.has("resume"):
        base = cfg.get_str("resume")
        if not os.path.isfile(base + ".particles.csv"):
            raise ConfigError(f"checkpoint not found: {base}.particles.csv")
        m0, start_iteration, seed = flow.read_checkpoint(base)
        if start_iteration > len(diffs):
            raise DataError(
                f"checkpoint iteration {start_iteration} exceeds available observations"
            )
    else:
        n_particles = cfg.get_int("n_particles", "1000")
        init_lo = cfg.get_vec("init_lo", "0,0")
        init_hi = cfg.get_vec("init_hi")
        try:
            m0 = measures.init_uniform_box(init_lo, init_hi, n_particles, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    remaining = len(diffs) - start_iteration
    max_iters = cfg.get_int("max_iters", str(remaining))
    if max_iters > remaining:
        max_iters = remaining
    checkpoint_every = cfg.get_int("checkpoint_every", "0")
    try:
        run_cfg = flow.FlowConfig(
            tau=cfg.get_float("tau", "0.01"),
            max_iters=max_iters,
            seed=seed,
            constraint=constraint,
            perturb_std=cfg.get_float("perturb_std", "0"),
            diag_every=cfg.get_int("diag_every", "1"),
            diag_subsample=min(cfg.get_int("diag_subsample", "256"), m0.n),
            allow_unsafe_tau=force,
            on_invalid=cfg.get_str("on_invalid", "abort"),
            workers=cfg.get_int("workers", "1"),
            checkpoint_every=checkpoint_every,
            checkpoint_path=os.path.join(out_dir, "checkpoint") if checkpoint_every else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    report = flow.validate_tau(obj.W, obj.rho, obj.sigma_w2, run_cfg.tau)
    if not report.tau_valid and not force:
        raise UnsafeStepError(
            f"step size {run_cfg.tau} is not inside (0, {report.tau_max:.6g}); "
            "rerun with --force to override"
        )

    os.makedirs(out_dir, exist_ok=True)
    final, trace = flow.run(m0, obj, diffs[start_iteration:], run_cfg, start_iteration)
    particles_path = os.path.join(out_dir, "particles.csv")
    trace_path = os.path.join(out_dir, "trace.csv")
    measures.write_particles_csv(final, particles_path)
    flow.write_trace_csv(trace, trace_path, final.d)

    print(
        f"ran {trace.iterations_run} iterations (tau={run_cfg.tau}, "
        f"alpha={report.alpha:.6g}, rate={report.per_step_rate:.6g}, "
        f"ball radius={report.ball_radius:.6g})"
    )
    print(f"wrote {particles_path} and {trace_path}")
    return 0


def _degradation_model(cfg: Config, require_truth: bool) -> pdm.DegradationModel:
    lam = np.zeros(2)
    if cfg.has("lambda1") or cfg.has("lambda2"):
        lam = np.array([cfg.get_float("lambda1"), cfg.get_float("lambda2")])
    elif require_truth:
        raise ConfigError("missing required config keys 'lambda1'/'lambda2'")
    try:
        return pdm.DegradationModel(
            a0=cfg.get_float("a0"),
            b0=cfg.get_float("b0"),
            lam=lam,
            zeta_min=cfg.get_float("zeta_min"),
            T=cfg.get_float("T", "5"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_predict(cfg: Config, out_dir: str, force: bool) -> int:
    particles_path = _input_path(cfg, "particles", out_dir, "particles.csv")
    belief = measures.read_particles_csv(particles_path)

    have_truth = cfg.has("lambda1") and cfg.has("lambda2")
    model = _degradation_model(cfg, require_truth=False)

    t_start = cfg.get_float("t_start", "0")
    t_stop = cfg.get_float("t_stop", "60")
    t_step = cfg.get_float("t_step", "0.5")
    if t_step <= 0 or t_stop < t_start:
        raise ConfigError("need t_step > 0 and t_stop >= t_start")
    count = int((t_stop - t_start) / t_step + 1e-9) + 1
    t_grid = t_start + t_step * np.arange(count)
    p_lo = cfg.get_float("p_lo", "0.1")
    p_hi = cfg.get_float("p_hi", "0.9")
    rule = cfg.get_str("rule", "percentile")
    rule_level = cfg.get_float("rule_level", "0.1")
    chance_alpha = cfg.get_float("chance_alpha", "0.1")
    if rule not in ("percentile", "mean", "chance"):
        raise ConfigError(f"unknown maintenance rule '{rule}'")

    observations = None
    if cfg.has("observations") or os.path.isfile(os.path.join(out_dir, "observations.csv")):
        observations = pdm.read_observations_csv(
            _input_path(cfg, "observations", out_dir, "observations.csv")
        )

    band = pdm.predict_damping_band(belief, model, t_grid, p_lo, p_hi)

    ours = pdm.suggested_maintenance_time(
        belief, model, rule=rule, level=rule_level if rule != "mean" else 0.5
    )
    by_rule = {
        "percentile": pdm.suggested_maintenance_time(belief, model, "percentile", rule_level),
        "mean": pdm.suggested_maintenance_time(belief, model, "mean"),
        "chance": pdm.suggested_maintenance_time(belief, model, "chance", chance_alpha),
    }

    ls_time = None
    lam_hat = None
    if observations is not None:
        lam_hat, ls_time = pdm.ls_baseline(observations, model.a0, model.b0, model.zeta_min)

    true_time = pdm.true_maintenance_time(model) if have_truth else None
    day = cfg.get_float("day", repr(observations[-1].t) if observations else "0")

    os.makedirs(out_dir, exist_ok=True)
    prediction_path = os.path.join(out_dir, "prediction.csv")
    with open(prediction_path, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["t", "p10", "mean", "p90", "zeta_true"])
        for t, lo, mean_z, hi in band:
            zt = pdm.damping_ratio(pdm.degrade(model, float(t))) if have_truth else None
            wtr.writerow(
                [repr(float(t)), repr(float(lo)), repr(float(mean_z)), repr(float(hi)), _fmt(zt)]
            )

    tstar_path = os.path.join(out_dir, "tstar.csv")
    with open(tstar_path, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["day", "ours", "ls", "true"])
        wtr.writerow(
            [
                repr(day),
                _fmt(ours.days),
                _fmt(ls_time.days if ls_time is not None else None),
                _fmt(true_time.days if true_time is not None else None),
            ]
        )

    print(f"wrote {prediction_path} and {tstar_path}")
    print(
        "suggested maintenance (days): "
        f"percentile({rule_level})={by_rule['percentile'].days:.3f} "
        f"[{by_rule['percentile'].status}], "
        f"mean={by_rule['mean'].days:.3f} [{by_rule['mean'].status}], "
        f"chance({chance_alpha})={by_rule['chance'].days:.3f} [{by_rule['chance'].status}]"
    )
    if lam_hat is not None:
        flag = " (negative component!)" if np.any(lam_hat < 0) else ""
        print(
            f"ls baseline: lambda_hat=({lam_hat[0]:.6g}, {lam_hat[1]:.6g}){flag}, "
            f"t*={ls_time.days:.3f} [{ls_time.status}]"
        )
    if true_time is not None:
        print(f"true maintenance time: {true_time.days:.3f} [{true_time.status}]")
    return 0


def cmd_diagnose(cfg: Config, out_dir: str, force: bool) -> int:
    particles_path = _input_path(cfg, "particles", out_dir, "particles.csv")
    reference_path = _input_path(cfg, "reference", out_dir, "reference.csv")
    m = measures.read_particles_csv(particles_path)
    ref = measures.read_particles_csv(reference_path)
    if m.d != ref.d:
        raise DataError(f"dimension mismatch: particles d={m.d}, reference d={ref.d}")

    w = pdm.process_matrix(cfg.get_float("T", "5"))
    report = flow.validate_tau(
        w, cfg.get_float("rho", "0.1"), cfg.get_float("sigma_w2", "0"), cfg.get_float("tau", "0.01")
    )

    k = min(cfg.get_int("diag_subsample", "256"), m.n, ref.n)
    seed = cfg.get_int("seed", "0")
    idx_m = np.sort(measures.substream(seed, _DIAG_SUB_STREAM).choice(m.n, size=k, replace=False))
    idx_r = np.sort(measures.substream(seed, _DIAG_SUB_STREAM).choice(ref.n, size=k, replace=False))
    sub_m = measures.ParticleMeasure(m.points[idx_m])
    sub_r = measures.ParticleMeasure(ref.points[idx_r])

    w2, _ = transport.w2_exact(sub_m, sub_r)
    gelbrich = transport.gelbrich_lower_bound(m, ref)
    mean_gap = float(np.linalg.norm(measures.mean(m) - measures.mean(ref)))
    bures_gap = transport.bures_distance(measures.covariance(m), measures.covariance(ref))
    lipschitz_gap = flow.lipschitz_norm_gap(m, ref, lambda x: float(np.linalg.norm(x)), 1.0)

    metrics = [
        ("alpha", report.alpha),
        ("C", report.C),
        ("sigma2", report.sigma2),
        ("eta", report.eta),
        ("tau", report.tau),
        ("tau_max", report.tau_max),
        ("simple_cap", report.simple_cap),
        ("ball_radius", report.ball_radius),
        ("per_step_rate", report.per_step_rate),
        ("tau_valid", float(report.tau_valid)),
        ("w2_subsampled", w2),
        ("subsample", float(k)),
        ("gelbrich_lower_bound", gelbrich),
        ("mean_gap", mean_gap),
        ("bures_gap", bures_gap),
        ("moment_gap", float(np.hypot(mean_gap, bures_gap))),
        ("lipschitz_norm_gap", lipschitz_gap),
    ]

    os.makedirs(out_dir, exist_ok=True)
    diag_path = os.path.join(out_dir, "diagnostics.csv")
    with open(diag_path, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["metric", "value"])
        for name, value in metrics:
            wtr.writerow([name, repr(float(value))])

    print(f"step-size report: tau={report.tau} valid={report.tau_valid} "
          f"(tau_max={report.tau_max:.6g}, cap={report.simple_cap:.6g})")
    print(f"  alpha={report.alpha:.6g} C={report.C:.6g} eta={report.eta:.6g} "
          f"sigma2={report.sigma2:.6g} ball_radius={report.ball_radius:.6g} "
          f"rate={report.per_step_rate:.6g}")
    print(f"measured on {k} subsampled particles: W2={w2:.6g}")
    print(f"gelbrich lower bound={gelbrich:.6g} (never exceeds the exact W2)")
    print(f"mean gap={mean_gap:.6g} bures gap={bures_gap:.6g} "
          f"moment gap={float(np.hypot(mean_gap, bures_gap)):.6g}")
    print(f"lipschitz norm gap (|x|, L=1)={lipschitz_gap:.6g}")
    print(f"wrote {diag_path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "flow": cmd_flow,
    "predict": cmd_predict,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wgflow",
        description="Particle belief flows over streaming data, desk-scale maintenance pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "simulate daily plant trajectories and write observations.csv"),
        ("flow", "run the belief flow on an observation file"),
        ("predict", "turn a particle belief into damping bands and maintenance times"),
        ("diagnose", "report convergence constants and measured distances"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--paper-preset", action="store_true",
                       help="load the desk-scale case-study constants as defaults")
        p.add_argument("--force", action="store_true",
                       help="run even if the step size fails validation")

    args, extra = parser.parse_known_args(argv)
    try:
        cfg = _build_config(args, extra)
        return _COMMANDS[args.command](cfg, args.out, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except UnsafeStepError as exc:
        print(f"unsafe step size: {exc}", file=sys.stderr)
        return 5
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
