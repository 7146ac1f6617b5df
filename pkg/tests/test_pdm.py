import math

import numpy as np
import pytest
from scipy.optimize import brentq

from wgflow.errors import DataError, NumericalError
from wgflow.measures import ParticleMeasure
from wgflow.pdm import (
    DegradationModel,
    Observation,
    PlantParams,
    damping_ratio,
    degrade,
    difference_stream,
    ls_baseline,
    ls_estimate,
    observation_residuals,
    predict_damping_band,
    process_matrix,
    read_observations_csv,
    simulate_trajectory,
    suggested_maintenance_time,
    true_maintenance_time,
    write_observations_csv,
)

LAM = np.array([2.0 / 60.0, 5.0 / 60.0])


def case_study_model(zeta_min=0.4):
    return DegradationModel(2.5, 1.0, LAM, zeta_min, 5.0)


class TestPlantParams:
    def test_stability_enforced(self):
        with pytest.raises(NumericalError, match="spectral radius"):
            PlantParams(a=0.1, b=4.0, r=1.0, dt=1.0, horizon=10.0, eps_half_width=0.0)

    def test_positivity(self):
        with pytest.raises(ValueError):
            PlantParams(a=-1.0, b=1.0, r=1.0, dt=0.001, horizon=1.0, eps_half_width=0.0)

    def test_case_study_regimes_are_stable(self):
        for t in (0.0, 30.0, 60.0):
            y = degrade(case_study_model(), t)
            PlantParams(float(y[0]), float(y[1]), 1.0, 0.001, 1.0, 3.0)


class TestSimulateTrajectory:
    def test_equilibrium_is_exact_fixed_point(self):
        p = PlantParams(2.5, 1.0, 1.0, 0.001, 1.0, 0.0)
        states, refs = simulate_trajectory(p, np.array([1.0, 0.0]), seed=0)
        assert states.shape == (1001, 2)
        assert np.array_equal(states, np.tile([1.0, 0.0], (1001, 1)))
        assert np.array_equal(refs, np.ones(1001))

    def test_single_step_hand_computed(self):
        p = PlantParams(2.5, 1.0, 1.0, 0.001, 0.001, 0.0)
        states, _ = simulate_trajectory(p, np.zeros(2), seed=0)
        assert states.shape == (2, 2)
        assert np.array_equal(states[1], [0.0, 0.001])

    def test_overdamped_settling(self):
        p = PlantParams(2.5, 1.0, 1.0, 0.001, 100.0, 0.0)
        states, _ = simulate_trajectory(p, np.zeros(2), seed=0)
        assert abs(states[-1, 0] - 1.0) < 1e-3
        settled = np.abs(states[:, 0] - 1.0) < 1e-3
        assert settled[-1] and np.flatnonzero(settled)[0] < states.shape[0]

    def test_deterministic_per_seed(self):
        p = PlantParams(2.5, 1.0, 1.0, 0.001, 1.0, 3.0)
        a, _ = simulate_trajectory(p, np.zeros(2), seed=5)
        b, _ = simulate_trajectory(p, np.zeros(2), seed=5)
        c, _ = simulate_trajectory(p, np.zeros(2), seed=6)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestLsEstimate:
    def test_noise_free_recovery_fresh_system(self):
        p = PlantParams(2.5, 1.0, 1.0, 0.001, 100.0, 0.0)
        traj = simulate_trajectory(p, np.zeros(2), seed=0)
        est = ls_estimate(traj, 0.001)
        assert np.max(np.abs(est - [2.5, 1.0])) < 1e-8

    def test_noise_free_recovery_degraded_system(self):
        p = PlantParams(1.5, 3.5, 1.0, 0.001, 100.0, 0.0)
        traj = simulate_trajectory(p, np.zeros(2), seed=0)
        est = ls_estimate(traj, 0.001)
        assert np.max(np.abs(est - [1.5, 3.5])) < 1e-8

    def test_degenerate_trajectory_rejected(self):
        # zero velocity and reference equal to position: no excitation
        states = np.column_stack([np.ones(10), np.zeros(10)])
        refs = np.ones(10)
        with pytest.raises(NumericalError, match="rank"):
            ls_estimate((states, refs), 0.001)

    def test_needs_two_transitions(self):
        states = np.zeros((2, 2))
        with pytest.raises(ValueError, match="transitions"):
            ls_estimate((states, np.ones(2)), 0.001)

    def test_error_shrinks_with_noise(self):
        errors = {}
        for width in (3.0, 0.3, 0.03):
            errs = []
            for seed in range(20):
                p = PlantParams(2.5, 1.0, 1.0, 0.001, 30.0, width)
                traj = simulate_trajectory(p, np.array([-2.5, 0.0]), seed=seed)
                est = ls_estimate(traj, 0.001)
                errs.append(float(np.linalg.norm(est - [2.5, 1.0])))
            errors[width] = float(np.median(errs))
        assert errors[3.0] > errors[0.3] > errors[0.03]


class TestDegradeAndRatio:
    def test_degrade_at_zero(self):
        assert np.array_equal(degrade(case_study_model(), 0.0), [2.5, 1.0])

    def test_degrade_day_30(self):
        assert np.allclose(degrade(case_study_model(), 30.0), [1.5, 3.5], rtol=1e-14)

    def test_degrade_day_60(self):
        y = degrade(case_study_model(), 60.0)
        assert np.allclose(y, [0.5, 6.0], rtol=1e-14)
        assert damping_ratio(y) == pytest.approx(0.5 / (2 * math.sqrt(6.0)), rel=1e-12)

    def test_damping_ratio_values(self):
        assert damping_ratio([2.5, 1.0]) == pytest.approx(1.25, rel=1e-15)
        assert damping_ratio([1.5, 3.5]) == pytest.approx(0.4008918628686366, rel=1e-12)

    def test_damping_ratio_inversion(self):
        for b, c in [(1.0, 0.5), (3.7, 1.2), (0.25, 2.0)]:
            assert damping_ratio([2 * math.sqrt(b) * c, b]) == pytest.approx(c, rel=1e-12)

    def test_damping_ratio_rejects_nonpositive_b(self):
        with pytest.raises(ValueError, match="stiffness"):
            damping_ratio([1.0, 0.0])

    def test_negative_t_rejected(self):
        with pytest.raises(ValueError):
            degrade(case_study_model(), -1.0)


class TestTrueMaintenanceTime:
    def test_case_study_parameters_against_root_finder(self):
        model = case_study_model()
        got = true_maintenance_time(model)
        f = lambda t: damping_ratio(degrade(model, t)) - 0.4
        want = brentq(f, 0.0, 100.0, xtol=1e-10)
        assert got.status == "crossed"
        assert got.days == pytest.approx(want, abs=2e-6)
        assert abs(got.days - 30.05) < 0.1

    def test_boundary_threshold(self):
        model = DegradationModel(2.5, 1.0, LAM, 1.25, 5.0)
        got = true_maintenance_time(model)
        assert got.days == pytest.approx(0.0, abs=1e-6)

    def test_no_decay_never_crosses(self):
        model = DegradationModel(2.5, 1.0, np.zeros(2), 0.4, 5.0)
        got = true_maintenance_time(model)
        assert math.isinf(got.days) and got.status == "never"

    def test_ratio_strictly_decreasing_on_grid(self):
        model = case_study_model()
        t_star = true_maintenance_time(model).days
        grid = np.linspace(0.0, t_star + 10.0, 200)
        vals = [damping_ratio(degrade(model, t)) for t in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestDegradationModelValidation:
    def test_must_start_safe(self):
        with pytest.raises(ValueError, match="safe"):
            DegradationModel(0.5, 1.0, LAM, 0.4, 5.0)

    def test_negative_rates_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            DegradationModel(2.5, 1.0, np.array([-0.1, 0.1]), 0.4, 5.0)


class TestDifferenceStream:
    def test_noise_free_differences(self):
        model = case_study_model()
        obs = [Observation(t, degrade(model, t)) for t in (0.0, 5.0, 10.0)]
        diffs = difference_stream(obs)
        expected = np.array([-LAM[0] * 5.0, LAM[1] * 5.0])
        assert np.allclose(diffs, np.tile(expected, (2, 1)), rtol=1e-12)
        assert np.allclose(diffs[0], [-1.0 / 6.0, 5.0 / 12.0], rtol=1e-12)

    def test_matches_induced_model_matrix(self):
        model = case_study_model()
        obs = [Observation(t, degrade(model, t)) for t in (0.0, 5.0, 10.0, 15.0)]
        diffs = difference_stream(obs)
        w = process_matrix(5.0)
        assert np.allclose(diffs, np.tile(w @ LAM, (3, 1)), rtol=1e-12)

    def test_two_observations_one_difference(self):
        obs = [Observation(0.0, np.array([2.5, 1.0])), Observation(5.0, np.array([2.4, 1.5]))]
        diffs = difference_stream(obs)
        assert diffs.shape == (1, 2)
        assert np.allclose(diffs[0], [-0.1, 0.5])

    def test_irregular_spacing_rejected(self):
        obs = [
            Observation(0.0, np.array([2.5, 1.0])),
            Observation(5.0, np.array([2.4, 1.1])),
            Observation(11.0, np.array([2.3, 1.2])),
        ]
        with pytest.raises(DataError, match="gap"):
            difference_stream(obs)

    def test_decreasing_times_rejected(self):
        obs = [Observation(5.0, np.array([2.5, 1.0])), Observation(5.0, np.array([2.4, 1.1]))]
        with pytest.raises(DataError, match="increasing"):
            difference_stream(obs)

    def test_single_observation_rejected(self):
        with pytest.raises(DataError, match="two"):
            difference_stream([Observation(0.0, np.array([2.5, 1.0]))])

    def test_process_matrix(self):
        assert np.array_equal(process_matrix(5.0), np.diag([-5.0, 5.0]))
        with pytest.raises(ValueError):
            process_matrix(0.0)


class TestPredictDampingBand:
    def test_dirac_collapses_to_true_curve(self):
        model = case_study_model()
        m = ParticleMeasure(LAM[None, :])
        band = predict_damping_band(m, model, [0.0, 10.0, 30.0])
        for t, lo, mid, hi in band:
            z = damping_ratio(degrade(model, float(t)))
            assert lo == pytest.approx(z, rel=1e-12)
            assert mid == pytest.approx(z, rel=1e-12)
            assert hi == pytest.approx(z, rel=1e-12)

    def test_t_zero_is_rate_independent(self):
        rng = np.random.default_rng(0)
        m = ParticleMeasure(rng.uniform(0, 8 / 60, size=(50, 2)))
        band = predict_damping_band(m, case_study_model(), [0.0])
        assert band[0, 1] == band[0, 2] == band[0, 3] == pytest.approx(1.25, rel=1e-14)

    def test_contraction_narrows_band(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 8 / 60, size=(200, 2))
        wide = ParticleMeasure(pts)
        narrow = ParticleMeasure(pts.mean(axis=0) + 0.5 * (pts - pts.mean(axis=0)))
        model = case_study_model()
        for t in (5.0, 10.0):
            bw = predict_damping_band(wide, model, [t])
            bn = predict_damping_band(narrow, model, [t])
            assert bn[0, 3] - bn[0, 1] < bw[0, 3] - bw[0, 1]

    def test_handles_extreme_extrapolation(self):
        m = ParticleMeasure(np.array([[0.0, 0.0], [0.2, 0.2]]))
        band = predict_damping_band(m, case_study_model(), [1e6])
        assert np.all(np.isfinite(band))


class TestSuggestedMaintenanceTime:
    def test_dirac_matches_true_time_for_all_rules(self):
        model = case_study_model()
        m = ParticleMeasure(LAM[None, :])
        t_star = true_maintenance_time(model).days
        for rule, level in (("percentile", 0.1), ("mean", 0.5), ("chance", 0.1)):
            got = suggested_maintenance_time(m, model, rule, level)
            assert got.days == pytest.approx(t_star, abs=2e-3)

    def test_rule_ordering_on_domain_clouds(self):
        rng = np.random.default_rng(2)
        model = case_study_model()
        for _ in range(20):
            m = ParticleMeasure(rng.uniform(0, 8 / 60, size=(60, 2)))
            lo = suggested_maintenance_time(m, model, "percentile", 0.1).days
            mid = suggested_maintenance_time(m, model, "mean").days
            hi = suggested_maintenance_time(m, model, "percentile", 0.9).days
            assert lo <= mid + 2e-3
            assert mid <= hi + 2e-3

    def test_chance_half_between_two_particles(self):
        model = case_study_model()
        a = LAM * 0.7
        b = LAM * 1.3
        t_a = suggested_maintenance_time(ParticleMeasure(a[None, :]), model, "chance", 0.5).days
        t_b = suggested_maintenance_time(ParticleMeasure(b[None, :]), model, "chance", 0.5).days
        both = suggested_maintenance_time(
            ParticleMeasure(np.stack([a, b])), model, "chance", 0.5
        ).days
        assert min(t_a, t_b) - 2e-3 <= both <= max(t_a, t_b) + 2e-3

    def test_boundary_threshold_gives_zero(self):
        model = DegradationModel(2.5, 1.0, LAM, 1.25, 5.0)
        m = ParticleMeasure(LAM[None, :])
        got = suggested_maintenance_time(m, model, "percentile", 0.1)
        assert got.days == pytest.approx(0.0, abs=2e-3)

    def test_zero_rates_never_cross(self):
        model = case_study_model()
        m = ParticleMeasure(np.zeros((1, 2)))
        got = suggested_maintenance_time(m, model, "mean")
        assert math.isinf(got.days) and got.status == "never"

    def test_prediction_collapse_is_conservative(self):
        # Shrinking a symmetric cloud toward the true rates drives the
        # conservative quantile rule up to the true time, from below.
        model = case_study_model()
        t_star = true_maintenance_time(model).days
        rng = np.random.default_rng(3)
        offsets = rng.uniform(-1.0, 1.0, size=(100, 2)) * np.array([0.02, 0.04])
        offsets -= offsets.mean(axis=0)
        gaps = []
        for scale in (1.0, 0.1, 0.01):
            m = ParticleMeasure(LAM + scale * offsets)
            got = suggested_maintenance_time(m, model, "percentile", 0.1).days
            assert got <= t_star + 2e-3
            gaps.append(t_star - got)
        assert gaps[0] > gaps[1] > gaps[2] - 2e-3
        assert gaps[2] <= 0.5

    def test_unknown_rule_rejected(self):
        m = ParticleMeasure(LAM[None, :])
        with pytest.raises(ValueError, match="rule"):
            suggested_maintenance_time(m, case_study_model(), "median")


class TestLsBaseline:
    def test_noise_free_exact_recovery(self):
        model = case_study_model()
        obs = [Observation(t, degrade(model, t)) for t in (0.0, 5.0, 10.0, 15.0)]
        lam_hat, t_star = ls_baseline(obs, 2.5, 1.0, 0.4)
        assert np.allclose(lam_hat, LAM, rtol=1e-12)
        assert t_star.days == pytest.approx(true_maintenance_time(model).days, abs=1e-4)

    def test_single_informative_pair(self):
        model = case_study_model()
        obs = [Observation(0.0, degrade(model, 0.0)), Observation(5.0, degrade(model, 5.0))]
        lam_hat, t_star = ls_baseline(obs, 2.5, 1.0, 0.4)
        assert np.allclose(lam_hat, LAM, rtol=1e-12)
        assert t_star.status == "crossed"

    def test_negative_component_kept_and_crossing_found(self):
        # Noise pushed a_hat upward, so the fitted damping slope is
        # negative; the unclamped fit must still yield a crossing when the
        # stiffness growth dominates.
        obs = [
            Observation(0.0, np.array([2.5, 1.0])),
            Observation(5.0, np.array([2.6, 11.0])),
        ]
        lam_hat, t_star = ls_baseline(obs, 2.5, 1.0, 0.4)
        assert lam_hat[0] < 0 and lam_hat[1] > 0
        assert t_star.status == "crossed"
        zeta_at = lambda t: (2.5 - lam_hat[0] * t) / (2 * math.sqrt(1.0 + lam_hat[1] * t))
        assert zeta_at(t_star.days) == pytest.approx(0.4, abs=1e-3)

    def test_negative_component_can_stay_safe_forever(self):
        obs = [
            Observation(0.0, np.array([2.5, 1.0])),
            Observation(5.0, np.array([2.6, 1.05])),
        ]
        lam_hat, t_star = ls_baseline(obs, 2.5, 1.0, 0.4)
        assert lam_hat[0] < 0
        assert t_star.status == "never" and math.isinf(t_star.days)

    def test_all_observations_at_zero_rejected(self):
        obs = [Observation(0.0, np.array([2.5, 1.0]))]
        with pytest.raises(NumericalError, match="unidentifiable"):
            ls_baseline(obs, 2.5, 1.0, 0.4)


class TestObservationCsv:
    def test_round_trip_bytes(self, tmp_path):
        model = case_study_model()
        obs = [Observation(t, degrade(model, t) + 1e-3 * np.sin(t + np.arange(2))) for t in (0.0, 5.0, 10.0)]
        p1 = tmp_path / "o1.csv"
        p2 = tmp_path / "o2.csv"
        write_observations_csv(obs, p1)
        again = read_observations_csv(p1)
        write_observations_csv(again, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().splitlines()[0] == "t,a_hat,b_hat"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,a,b\n0,1,2\n")
        with pytest.raises(DataError, match="header"):
            read_observations_csv(path)

    def test_residual_diagnostic(self):
        model = case_study_model()
        obs = [Observation(t, degrade(model, t) + 0.25) for t in (0.0, 5.0)]
        res = observation_residuals(obs, model)
        assert np.allclose(res, 0.25, rtol=1e-12)
