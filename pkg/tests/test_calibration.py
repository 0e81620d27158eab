"""Self-consistency oracles for the ramp-constant and discharge-coefficient
fits: plant a parameter, synthesize the observable record with the engine's
own forward model, then verify the fit recovers the planted value."""

import math

import numpy as np
import pytest

from trs_engine.geometry import StageStoragePoint, fit_area_model
from trs_engine.hydraulics import (
    DischargeCoefficients,
    PlantSpec,
    RampCalibrationTrace,
    SluicingTrace,
    ZETA_FLOOR_MIN,
    calibrate_zeta,
    ebb_hill_chart,
    fit_discharge_coefficients,
    predict_ramped_power,
    simulate_sluicing_levels,
    sluicing_nssd,
)

SPEC = PlantSpec()
AREA = fit_area_model(
    [
        StageStoragePoint(0.0, 0.0),
        StageStoragePoint(5.0, 65e6),
        StageStoragePoint(8.5, 110e6),
        StageStoragePoint(10.9, 150e6),
        StageStoragePoint(13.5, 184e6),
    ]
)


def synth_head_profile(dt_s=60.0, n=360):
    """A generating phase: head builds from 2 m to ~5.5 m then decays."""
    t = np.arange(n) * dt_s
    rise = 2.0 + 3.5 * np.clip(t / 3600.0, 0.0, 1.0)
    fall = np.where(t > 3600.0, -1.2 * (t - 3600.0) / 7200.0, 0.0)
    return np.clip(rise + fall, 0.0, None)


def make_zeta_trace(zeta_a, zeta_d, dt_s=60.0, noise=0.0, seed=0):
    head = synth_head_profile(dt_s)
    clean = RampCalibrationTrace(dt_s, head, np.zeros_like(head))
    power = predict_ramped_power(clean, ebb_hill_chart(), SPEC, 1.0, zeta_a, zeta_d)
    if noise:
        rng = np.random.default_rng(seed)
        power = power + rng.normal(0.0, noise * power.max(), power.shape)
    return RampCalibrationTrace(dt_s, head, power)


class TestCalibrateZeta:
    def test_recovers_planted_constants(self):
        trace = make_zeta_trace(14.2, 1.355)
        fit = calibrate_zeta(trace, ebb_hill_chart())
        assert not fit.degenerate
        assert fit.zeta_accel_min == pytest.approx(14.2, abs=0.1)
        assert fit.zeta_decel_min == pytest.approx(1.355, abs=0.1)

    def test_recovers_at_lower_bound(self):
        trace = make_zeta_trace(ZETA_FLOOR_MIN, ZETA_FLOOR_MIN)
        fit = calibrate_zeta(trace, ebb_hill_chart())
        assert fit.zeta_accel_min == pytest.approx(ZETA_FLOOR_MIN, abs=0.1)
        assert fit.zeta_decel_min == pytest.approx(ZETA_FLOOR_MIN, abs=0.1)

    def test_noise_recovery_within_one_minute(self):
        # Monte Carlo over 20 seeds at 1 percent of peak power
        errs_a, errs_d = [], []
        for seed in range(20):
            trace = make_zeta_trace(14.2, 1.355, noise=0.01, seed=seed)
            fit = calibrate_zeta(trace, ebb_hill_chart())
            errs_a.append(fit.zeta_accel_min - 14.2)
            errs_d.append(fit.zeta_decel_min - 1.355)
        assert max(abs(e) for e in errs_a) <= 1.0
        assert max(abs(e) for e in errs_d) <= 1.0

    def test_flat_trace_degenerate(self):
        head = np.zeros(100)
        power = np.zeros(100)
        fit = calibrate_zeta(
            RampCalibrationTrace(60.0, head, power), ebb_hill_chart()
        )
        assert fit.degenerate
        assert fit.zeta_accel_min == ZETA_FLOOR_MIN
        assert fit.zeta_decel_min == ZETA_FLOOR_MIN


def make_sluicing_traces(coeffs, dt_s=360.0, n=40):
    """Three stages with different structure mixes so both coefficients are
    identifiable: sluices only, both, idling turbines only."""
    t = np.arange(n) * dt_s
    ocean = 8.0 + 1.5 * np.cos(2 * math.pi * t / (12.42 * 3600.0))
    mixes = [(True, 0), (True, 24), (False, 24)]
    starts = [4.5, 5.0, 5.5]
    traces = []
    for (sluice_on, n_idle), start in zip(mixes, starts):
        shell = SluicingTrace(dt_s, ocean, np.full(n, start), sluice_on, n_idle)
        lagoon = simulate_sluicing_levels(shell, coeffs, AREA, SPEC)
        traces.append(SluicingTrace(dt_s, ocean, lagoon, sluice_on, n_idle))
    return traces


class TestFitDischargeCoefficients:
    def test_recovers_planted_coefficients(self):
        truth = DischargeCoefficients(1.017, 0.967)
        traces = make_sluicing_traces(truth)
        fit = fit_discharge_coefficients(traces, AREA, SPEC)
        assert fit.cd_sluice == pytest.approx(1.017, abs=0.01)
        assert fit.cd_turbine == pytest.approx(0.967, abs=0.01)

    def test_unity_coefficients_change_little(self):
        # adopting (1, 1) moves predicted levels by well under 10 percent
        # of the stage's level excursion
        truth = DischargeCoefficients(1.017, 0.967)
        traces = make_sluicing_traces(truth)
        for tr in traces:
            pred = simulate_sluicing_levels(tr, DischargeCoefficients(1.0, 1.0), AREA, SPEC)
            excursion = tr.lagoon_m.max() - tr.lagoon_m.min()
            rms = float(np.sqrt(np.mean((pred - tr.lagoon_m) ** 2)))
            assert rms < 0.1 * excursion

    def test_interior_truth_never_recovered_at_corners(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            truth = DischargeCoefficients(
                rng.uniform(1.01, 1.07), rng.uniform(0.95, 1.35)
            )
            traces = make_sluicing_traces(truth)
            fit = fit_discharge_coefficients(traces, AREA, SPEC)
            corners = [(1.0, 0.91), (1.0, 1.4), (1.077, 0.91), (1.077, 1.4)]
            assert all(
                abs(fit.cd_sluice - cs) > 1e-3 or abs(fit.cd_turbine - ct) > 1e-3
                for cs, ct in corners
            )

    def test_empty_trace_set_rejected(self):
        with pytest.raises(ValueError):
            fit_discharge_coefficients([], AREA, SPEC)

    def test_nssd_positive_and_zero_at_truth(self):
        truth = DischargeCoefficients(1.02, 1.0)
        traces = make_sluicing_traces(truth)
        assert sluicing_nssd(traces, truth, AREA, SPEC) == pytest.approx(0.0, abs=1e-12)
        off = DischargeCoefficients(1.06, 1.2)
        assert sluicing_nssd(traces, off, AREA, SPEC) > 0.0
